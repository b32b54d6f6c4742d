"""Figure rendering for benchmark outputs.

Renders log-log optimality-gap curves, tracking-error decay, and meta-test
adaptation curves to image files next to the CSV traces.  Uses the Agg
backend so runs work headless.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .trace import RunTrace  # noqa: E402

_GAP_FLOOR = 1e-16


def gap_curves(
    traces_by_arm: Dict[str, Sequence[RunTrace]],
    jstar: float,
    path,
    title: str = "optimality gap vs samples",
) -> Path:
    """Median optimality gap against cumulative oracle samples, one curve per
    optimizer arm (log-log)."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for name, traces in traces_by_arm.items():
        if not traces:
            continue
        samples = traces[0].cumulative_samples
        gaps = np.median(
            np.stack([tr.J_exact for tr in traces]) - jstar, axis=0
        )
        ax.plot(samples, np.maximum(gaps, _GAP_FLOOR), marker=".", label=name)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("cumulative oracle samples")
    ax.set_ylabel("J(x) - J*")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def tracking_curves(
    traces: Sequence[RunTrace],
    path,
    title: str = "tracking error decay",
) -> Path:
    """Mean squared tracking error against iteration (log-log)."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ts = traces[0].t
    err = np.stack([tr.tracking_err for tr in traces]).mean(axis=0)
    keep = np.isfinite(err) & (err > 0)
    ax.plot(ts[keep], err[keep], marker=".")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("iteration t")
    ax.set_ylabel("mean ||g(x_t) - y_t||^2")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def adaptation_curves(
    curves_by_model: Dict[str, np.ndarray],
    path,
    title: str = "meta-test adaptation",
) -> Path:
    """Mean held-out MSE per fine-tune step, one curve per model."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for model, curves in curves_by_model.items():
        curves = np.asarray(curves)
        steps = np.arange(curves.shape[1])
        mean = curves.mean(axis=0)
        se = curves.std(axis=0) / np.sqrt(curves.shape[0])
        ax.plot(steps, mean, marker="o", label=model)
        ax.fill_between(steps, mean - se, mean + se, alpha=0.2)
    ax.set_yscale("log")
    ax.set_xlabel("fine-tune gradient steps")
    ax.set_ylabel("mean test MSE")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def render_run_dir(run_dir, jstar: float | None = None) -> list[Path]:
    """Re-render figures from the CSV traces found in a run directory.

    Groups trace files named ``<arm>_seed<k>.csv`` by arm.  Reads J* from the
    manifest when not supplied.
    """
    run_dir = Path(run_dir)
    if jstar is None:
        manifest = run_dir / "manifest.json"
        if manifest.exists():
            import json

            jstar = json.loads(manifest.read_text()).get("jstar", 0.0)
        else:
            jstar = 0.0
    by_arm: Dict[str, list[RunTrace]] = {}
    for csv in sorted(run_dir.glob("*_seed*.csv")):
        if csv.name.endswith("_meta_test.csv"):
            continue
        arm = csv.stem.rsplit("_seed", 1)[0]
        by_arm.setdefault(arm, []).append(RunTrace.from_csv(csv))
    rendered = []
    if by_arm:
        rendered.append(gap_curves(by_arm, jstar, run_dir / "gap_curves.png"))
        all_traces = [tr for trs in by_arm.values() for tr in trs]
        if any(np.isfinite(tr.tracking_err).any() for tr in all_traces):
            rendered.append(
                tracking_curves(all_traces, run_dir / "tracking_error.png")
            )
    return rendered
