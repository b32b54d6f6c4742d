"""Benchmark harness: problem construction, seeded runs across optimizers,
optimality-gap baselines, CSV/manifest emission, ablation grids, and the
meta-learning train/evaluate pipeline.

Every run owns its random streams (derived from its seed) and its output
file; reruns of the same configuration reproduce the same numbers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import ConfigError, ExperimentConfig, OptimizerArm, ProblemSpec
from .core import (
    KIND_EVAL,
    KIND_INIT,
    KIND_INNER_JAC,
    KIND_INNER_VALUE,
    KIND_OUTER_GRAD,
    KIND_TASKS,
    CompositionalProblem,
    InvalidConfigError,
    SampleStreams,
    ScheduleConfig,
    sample_inner,
    sample_outer,
)
from .meta import (
    SineTask,
    fine_tune_curve,
    multi_task_meta_problem,
    sample_task,
    single_task_meta_problem,
)
from .nets import Mlp, init_mlp
from .optimizers import (
    ASCPG_DEFAULT,
    SCGD_DEFAULT,
    AdamState,
    BaselineSchedule,
    CAdamState,
    adam_step,
    ascpg_run,
    cadam_run,
    cadam_step,
    scgd_run,
    sgd_step,
    _check_finite,
    _trace_row,
)
from .problems import (
    PortfolioData,
    QuadCompose,
    portfolio_problem,
    quad_compose_problem,
    random_quad,
    synthetic_returns,
)
from .trace import (
    RunTrace,
    file_sha256,
    geometric_checkpoints,
    write_manifest,
)


class DataError(ValueError):
    """Input data could not be loaded."""


class EmptyFileError(DataError):
    """The returns file carries no data rows."""


class MalformedRowError(DataError):
    """A returns row has the wrong number of cells."""


class NonNumericCellError(DataError):
    """A returns cell could not be parsed as a decimal float."""


# ---------------------------------------------------------------------------
# Returns CSV format: header r_1,...,r_n then one row of decimal floats per
# time point.


def load_returns_csv(path) -> PortfolioData:
    path = Path(path)
    if not path.exists():
        raise DataError(f"returns file not found: {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if len(lines) < 2:
        raise EmptyFileError(f"{path} has no data rows")
    header = lines[0].split(",")
    n = len(header)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != n:
            raise MalformedRowError(
                f"{path}:{lineno}: expected {n} cells, got {len(cells)}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            bad = next(c for c in cells if not _is_float(c))
            raise NonNumericCellError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
    try:
        return PortfolioData(np.asarray(rows))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def write_returns_csv(path, data: PortfolioData) -> None:
    header = ",".join(f"r_{j + 1}" for j in range(data.n))
    lines = [header]
    for row in data.R:
        lines.append(",".join(format(v, ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Problem construction from config


def build_problem(spec: ProblemSpec) -> CompositionalProblem:
    """Instantiate the benchmark problem named by the config."""
    params = dict(spec.params)
    if spec.kind == "portfolio":
        source = params.get("source", "synthetic")
        if source == "csv":
            if "csv_path" not in params:
                raise ConfigError("portfolio csv source needs csv_path")
            data = load_returns_csv(params["csv_path"])
        elif source == "synthetic":
            data = synthetic_returns(
                m=params.get("m"),
                n=params.get("n"),
                seed=params.get("data_seed", 0),
                regime=params.get("regime"),
            )
        else:
            raise ConfigError(f"unknown portfolio source {source!r}")
        return portfolio_problem(data)
    if spec.kind == "quad":
        noise = (
            params.get("noise_g", params.get("noise", 0.1)),
            params.get("noise_j", params.get("noise", 0.1)),
            params.get("noise_f", params.get("noise", 0.1)),
        )
        qc = random_quad(
            p=params.get("p", 10),
            q=params.get("q", 15),
            seed=params.get("data_seed", 0),
            noise=noise,
        )
        return quad_compose_problem(qc)
    raise ConfigError(
        f"problem kind {spec.kind!r} is not trace-benchmarkable here; "
        "meta-learning runs go through the maml pipeline"
    )


def make_schedule(options: dict) -> ScheduleConfig:
    try:
        return ScheduleConfig(**options)
    except TypeError as exc:
        raise ConfigError(f"bad adaptive-schedule options: {exc}") from exc


def make_baseline_schedule(kind: str, options: dict) -> BaselineSchedule:
    base = SCGD_DEFAULT if kind == "scgd" else ASCPG_DEFAULT
    try:
        return replace(base, **options)
    except TypeError as exc:
        raise ConfigError(f"bad {kind} schedule options: {exc}") from exc


def make_clip(lo: float, hi: float) -> Callable[[np.ndarray], np.ndarray]:
    def clip(x: np.ndarray) -> np.ndarray:
        return np.clip(x, lo, hi)

    return clip


def resolve_checkpoints(spec: str, T: int) -> Optional[list[int]]:
    if spec == "all":
        return None
    if spec == "geometric":
        return geometric_checkpoints(T)
    try:
        points = sorted({int(tok) for tok in str(spec).split(",") if tok.strip()})
    except ValueError as exc:
        raise ConfigError(f"bad checkpoints spec {spec!r}") from exc
    if not points or points[0] < 1 or points[-1] > T:
        raise ConfigError(f"checkpoints must lie in [1, T]; got {spec!r}")
    return points


# ---------------------------------------------------------------------------
# Optimality baseline J*


_JSTAR_CACHE: dict[str, float] = {}


def compute_jstar(
    problem: CompositionalProblem,
    budget: int = 20000,
    grad_tol: float = 1e-10,
    cache_dir=None,
    x0: Optional[np.ndarray] = None,
) -> float:
    """Deterministic full-gradient descent with backtracking line search on
    the exact objective; returns the best value found.  Results are cached
    per problem content hash (in memory, and on disk when cache_dir given).
    """
    if problem.exact_objective is None or problem.exact_gradient is None:
        raise ValueError("J* needs a problem with exact objective and gradient")
    key = problem.content_hash
    cache_file = Path(cache_dir) / "jstar_cache.json" if cache_dir else None
    if key is not None:
        if key in _JSTAR_CACHE:
            return _JSTAR_CACHE[key]
        if cache_file is not None and cache_file.exists():
            disk = json.loads(cache_file.read_text())
            if key in disk:
                _JSTAR_CACHE[key] = disk[key]
                return disk[key]

    x = np.zeros(problem.p) if x0 is None else np.asarray(x0, dtype=float).copy()
    J = problem.exact_objective(x)
    best = J
    step = 1.0
    for _ in range(budget):
        g = problem.exact_gradient(x)
        gn2 = float(g @ g)
        if math.sqrt(gn2) <= grad_tol:
            break
        step = min(step * 2.0, 1e12)
        while True:
            x_new = x - step * g
            J_new = problem.exact_objective(x_new)
            if J_new <= J - 1e-4 * step * gn2:
                break
            step *= 0.5
            if step < 1e-20:
                break
        if step < 1e-20:
            break
        x, J = x_new, J_new
        best = min(best, J)

    if key is not None:
        _JSTAR_CACHE[key] = best
        if cache_file is not None:
            disk = json.loads(cache_file.read_text()) if cache_file.exists() else {}
            disk[key] = best
            cache_file.parent.mkdir(parents=True, exist_ok=True)
            cache_file.write_text(json.dumps(disk, indent=2, sort_keys=True) + "\n")
    return best


# ---------------------------------------------------------------------------
# Biased single-shot meta-gradient (for the non-compositional baselines)


def biased_composite_gradient(
    problem: CompositionalProblem,
    x: np.ndarray,
    t: int,
    streams: SampleStreams,
    k: int = 1,
) -> tuple[np.ndarray, int]:
    """Plug-in estimate grad_g(x)^T grad_f(g_hat(x)) with fresh samples.

    This is the estimator a non-compositional optimizer implicitly uses: the
    inner mean is replaced by a k-sample value estimate, which biases the
    outer gradient.  Returns (estimate, samples consumed).
    """
    g_hat = sample_inner(
        problem, x, k, streams.stream(t, KIND_INNER_VALUE), need_jacobian=False
    ).values.mean(axis=0)
    outer_mean = sample_outer(
        problem, g_hat, k, streams.stream(t, KIND_OUTER_GRAD)
    ).mean(axis=0)
    inner = sample_inner(problem, x, k, streams.stream(t, KIND_INNER_JAC))
    return inner.tmul(outer_mean), 3 * k


def _plain_run(
    problem: CompositionalProblem,
    kind: str,
    options: dict,
    x1: np.ndarray,
    T: int,
    streams: SampleStreams,
    checkpoints: Optional[Sequence[int]],
    sample_budget: Optional[int],
    post_step,
) -> tuple[np.ndarray, RunTrace]:
    """Adaptive-moment or plain-gradient arm driven by the biased estimator."""
    import time as _time

    alpha = float(options.get("alpha", 0.001 if kind == "adam" else 0.01))
    k = int(options.get("k", 1))
    beta1 = float(options.get("beta1", 0.9))
    beta2 = float(options.get("beta2", 0.999))
    epsilon = float(options.get("epsilon", 1e-8))
    marks = set(range(1, T + 1)) if checkpoints is None else set(checkpoints)
    rows = []
    cumulative = 0
    t0_ns = _time.monotonic_ns()
    state = AdamState.init(x1) if kind == "adam" else np.asarray(x1, dtype=float).copy()
    for t in range(1, T + 1):
        x = state.x if kind == "adam" else state
        est, samples = biased_composite_gradient(problem, x, t, streams, k)
        if kind == "adam":
            state = adam_step(state, est, alpha, beta1, beta2, epsilon)
            x = state.x
        else:
            state = sgd_step(state, est, alpha)
            x = state
        if post_step is not None:
            x = post_step(x)
            state = replace(state, x=x) if kind == "adam" else x
        _check_finite(x, x, t)
        cumulative += samples
        if t in marks:
            rows.append(
                _trace_row(problem, x, None, t, cumulative, alpha, 0.0, t0_ns)
            )
        if sample_budget is not None and cumulative >= sample_budget:
            break
    x = state.x if kind == "adam" else state
    return x.copy(), RunTrace.from_rows(rows)


# ---------------------------------------------------------------------------
# Experiment driver


def run_arm(
    problem: CompositionalProblem,
    arm: OptimizerArm,
    cfg: ExperimentConfig,
    seed: int,
    checkpoints: Optional[Sequence[int]],
    x1: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, RunTrace]:
    """One (optimizer, seed) run of the configured experiment."""
    streams = SampleStreams(seed)
    clip = make_clip(*cfg.box_clip) if cfg.box_clip else None
    x1 = np.zeros(problem.p) if x1 is None else x1
    if arm.kind == "cadam":
        sched = make_schedule(arm.options)
        return cadam_run(
            problem, x1, sched, cfg.T, streams,
            output_rule=cfg.output_rule, checkpoints=checkpoints,
            sample_budget=cfg.sample_budget, post_step=clip,
        )
    if arm.kind in ("scgd", "ascpg"):
        sched = make_baseline_schedule(arm.kind, arm.options)
        runner = scgd_run if arm.kind == "scgd" else ascpg_run
        return runner(
            problem, x1, cfg.T, streams, sched,
            checkpoints=checkpoints, sample_budget=cfg.sample_budget, post_step=clip,
        )
    if arm.kind in ("adam", "sgd"):
        return _plain_run(
            problem, arm.kind, arm.options, x1, cfg.T, streams,
            checkpoints, cfg.sample_budget, clip,
        )
    raise ConfigError(f"unknown optimizer kind {arm.kind!r}")


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Execute every (optimizer, seed) pair; write one trace CSV per run plus
    a manifest listing each emitted file with its content hash.

    Partial outputs are removed if any run fails.
    """
    out = Path(out_dir if out_dir is not None else cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(cfg.problem)
    jstar = (
        compute_jstar(problem, cache_dir=out)
        if problem.exact_objective is not None
        else float("nan")
    )
    checkpoints = resolve_checkpoints(cfg.checkpoints, cfg.T)

    entries = []
    written: list[Path] = []
    traces: dict[str, list[RunTrace]] = {}
    try:
        for arm in cfg.optimizers:
            traces[arm.name] = []
            for seed in cfg.seeds:
                _, trace = run_arm(problem, arm, cfg, seed, checkpoints)
                fname = f"{arm.name}_seed{seed}.csv"
                fpath = out / fname
                trace.to_csv(fpath)
                written.append(fpath)
                traces[arm.name].append(trace)
                entries.append(
                    {
                        "file": fname,
                        "sha256": file_sha256(fpath),
                        "kind": "trace",
                        "optimizer": arm.name,
                        "optimizer_kind": arm.kind,
                        "seed": seed,
                        "rows": len(trace),
                    }
                )
        if cfg.figures:
            from . import report

            fig_path = out / "gap_curves.png"
            report.gap_curves(traces, jstar, fig_path)
            written.append(fig_path)
            entries.append(
                {"file": fig_path.name, "sha256": file_sha256(fig_path), "kind": "figure"}
            )
        manifest_path = out / "manifest.json"
        write_manifest(
            manifest_path,
            entries,
            extra={
                "jstar": jstar,
                "problem": {"kind": cfg.problem.kind, "hash": problem.content_hash},
                "T": cfg.T,
                "seeds": cfg.seeds,
                "sample_budget": cfg.sample_budget,
            },
        )
    except Exception:
        for f in written:
            f.unlink(missing_ok=True)
        raise
    return {
        "out_dir": str(out),
        "manifest": str(manifest_path),
        "jstar": jstar,
        "entries": entries,
        "traces": traces,
    }


def ablation_grid(
    base_cfg: ExperimentConfig,
    axis: str,
    values: Sequence[float],
    out_dir=None,
) -> dict:
    """Clone the base config along one coupled axis and run each point.

    axis='batch' ties the three batch constants to K; axis='step' ties the
    two step constants to C.  Applies to the adaptive arms; other arms run
    unchanged.
    """
    if axis not in ("batch", "step"):
        raise ConfigError(f"ablation axis must be 'batch' or 'step', got {axis!r}")
    if not values:
        raise ConfigError("ablation needs at least one value")
    out = Path(out_dir if out_dir is not None else base_cfg.out_dir or ".")
    results = {}
    for value in values:
        arms = []
        for arm in base_cfg.optimizers:
            if arm.kind != "cadam":
                arms.append(arm)
                continue
            options = dict(arm.options)
            if axis == "batch":
                options["C_1"] = options["C_2"] = options["C_3"] = float(value)
            else:
                options["C_alpha"] = options["C_beta"] = float(value)
            arms.append(OptimizerArm(name=arm.name, kind=arm.kind, options=options))
        derived = replace(base_cfg, optimizers=arms)
        tag = ("K" if axis == "batch" else "C") + format(value, "g")
        results[value] = run_experiment(derived, out / tag)
    return results


# ---------------------------------------------------------------------------
# Meta-learning pipeline


_CHECKPOINT_MAGIC = np.int64(0x4D4C5043)  # arbitrary file tag


def save_checkpoint(path, sizes: Sequence[int], params: np.ndarray) -> None:
    """Flat parameter vector with a layer-size header; little-endian 64-bit."""
    sizes = np.asarray(sizes, dtype="<i8")
    params = np.asarray(params, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(np.asarray([len(sizes)], dtype="<i8").tobytes())
        fh.write(sizes.tobytes())
        fh.write(params.tobytes())


def load_checkpoint(path) -> tuple[tuple[int, ...], np.ndarray]:
    raw = Path(path).read_bytes()
    n_sizes = int(np.frombuffer(raw[:8], dtype="<i8")[0])
    sizes = tuple(int(s) for s in np.frombuffer(raw[8:8 + 8 * n_sizes], dtype="<i8"))
    params = np.frombuffer(raw[8 + 8 * n_sizes:], dtype="<f8").copy()
    return sizes, params


@dataclass
class MamlOptions:
    """Knobs of the meta-learning pipeline (benchmark defaults)."""

    case: int = 2
    layers: tuple[int, ...] = (1, 40, 40, 1)
    activation: str = "relu"
    meta_tasks: int = 8
    alpha_inner: float = 0.01
    shots: int = 10
    test_tasks: int = 100
    fine_tune_steps: int = 10

    @classmethod
    def from_params(cls, params: dict) -> "MamlOptions":
        opts = cls()
        if "layers" in params:
            opts.layers = tuple(int(s) for s in str(params["layers"]).split(","))
        for key in ("case", "meta_tasks", "shots", "test_tasks", "fine_tune_steps"):
            if key in params:
                setattr(opts, key, int(params[key]))
        if "alpha_inner" in params:
            opts.alpha_inner = float(params["alpha_inner"])
        if "activation" in params:
            opts.activation = str(params["activation"])
        return opts


def train_meta(
    arm: OptimizerArm,
    opts: MamlOptions,
    T: int,
    streams: SampleStreams,
    template: Optional[Mlp] = None,
) -> np.ndarray:
    """Train the shared initialization for T meta-iterations; returns the
    final flat parameter vector.

    In the multi-task case a fresh meta-batch of tasks is drawn each
    iteration while the optimizer state carries over (the tracking vector
    keeps its p*K layout since the task count is fixed).
    """
    template = (
        init_mlp(opts.layers, streams.stream(0, KIND_INIT), opts.activation)
        if template is None
        else template
    )
    p = template.n_params
    x = template.to_vector()
    fixed_task = None
    if opts.case == 1:
        fixed_task = sample_task(streams.stream(0, KIND_TASKS))

    def problem_at(t: int) -> CompositionalProblem:
        if opts.case == 1:
            return single_task_meta_problem(template, fixed_task, opts.alpha_inner, opts.shots)
        rng = streams.stream(t, KIND_TASKS)
        tasks = [sample_task(rng) for _ in range(opts.meta_tasks)]
        return multi_task_meta_problem(template, tasks, opts.alpha_inner, opts.shots)

    if arm.kind == "cadam":
        sched = make_schedule(arm.options)
        state = CAdamState.init(problem_at(1), x)
        for t in range(1, T + 1):
            problem = problem_at(t)
            state, _ = cadam_step(problem, state, sched.at(t), streams)
            _check_finite(state.x, state.y, t)
        return state.x
    if arm.kind in ("adam", "sgd"):
        alpha = float(arm.options.get("alpha", 0.001 if arm.kind == "adam" else 0.01))
        k = int(arm.options.get("k", 10))
        adam = AdamState.init(x)
        for t in range(1, T + 1):
            problem = problem_at(t)
            target = adam.x if arm.kind == "adam" else x
            est, _ = biased_composite_gradient(problem, target, t, streams, k)
            if arm.kind == "adam":
                adam = adam_step(
                    adam, est, alpha,
                    float(arm.options.get("beta1", 0.9)),
                    float(arm.options.get("beta2", 0.999)),
                    float(arm.options.get("epsilon", 1e-8)),
                )
                _check_finite(adam.x, adam.x, t)
            else:
                x = sgd_step(x, est, alpha)
                _check_finite(x, x, t)
        return adam.x if arm.kind == "adam" else x
    raise ConfigError(f"meta training supports cadam/adam/sgd arms, got {arm.kind!r}")


def meta_test_curves(
    template: Mlp,
    x_vector: np.ndarray,
    opts: MamlOptions,
    streams: SampleStreams,
) -> tuple[list[SineTask], np.ndarray]:
    """Fine-tuning MSE curves on fresh test tasks; (tasks, array (n_tasks, steps+1)).

    Task draws and batches come from per-task eval streams, so two models
    evaluated under the same seed see identical tasks and data.
    """
    tasks, curves = [], []
    for i in range(opts.test_tasks):
        rng = streams.stream(i, KIND_EVAL)
        task = sample_task(rng)
        tasks.append(task)
        curves.append(
            fine_tune_curve(
                template, x_vector, task,
                steps=opts.fine_tune_steps, alpha_inner=opts.alpha_inner,
                rng=rng, M=opts.shots,
            )
        )
    return tasks, np.asarray(curves)


def _write_meta_report(path, tasks, curves_by_model: dict) -> None:
    steps = next(iter(curves_by_model.values())).shape[1]
    header = ["task", "model", "amplitude", "phase"] + [f"mse_{s}" for s in range(steps)]
    lines = [",".join(header)]
    for model, curves in curves_by_model.items():
        for i, task in enumerate(tasks):
            cells = [str(i), model, format(task.amplitude, ".17g"), format(task.phase, ".17g")]
            cells += [format(v, ".17g") for v in curves[i]]
            lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def maml_pipeline(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Train the configured optimizer(s) on the sine-task composition, then
    fine-tune on fresh test tasks against a random-initialization control.

    Writes one checkpoint and one report CSV per (arm, seed), plus adaptation
    figures and a manifest.
    """
    if cfg.problem.kind not in ("maml-case1", "maml-case2"):
        raise ConfigError(f"maml pipeline needs a maml-case problem, got {cfg.problem.kind!r}")
    opts = MamlOptions.from_params(cfg.problem.params)
    opts.case = 1 if cfg.problem.kind == "maml-case1" else 2
    out = Path(out_dir if out_dir is not None else cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)

    entries = []
    written: list[Path] = []
    results = {}
    try:
        for arm in cfg.optimizers:
            for seed in cfg.seeds:
                streams = SampleStreams(seed)
                template = init_mlp(opts.layers, streams.stream(0, KIND_INIT), opts.activation)
                x_meta = train_meta(arm, opts, cfg.T, streams, template)

                ckpt_path = out / f"{arm.name}_seed{seed}.ckpt"
                save_checkpoint(ckpt_path, template.sizes, x_meta)
                written.append(ckpt_path)

                rand_vec = init_mlp(
                    opts.layers, streams.stream(1, KIND_INIT), opts.activation
                ).to_vector()
                tasks, trained_curves = meta_test_curves(template, x_meta, opts, streams)
                _, random_curves = meta_test_curves(template, rand_vec, opts, streams)

                report_path = out / f"{arm.name}_seed{seed}_meta_test.csv"
                curves = {"trained": trained_curves, "random-init": random_curves}
                _write_meta_report(report_path, tasks, curves)
                written.append(report_path)

                if cfg.figures:
                    from . import report

                    fig_path = out / f"{arm.name}_seed{seed}_adaptation.png"
                    report.adaptation_curves(curves, fig_path)
                    written.append(fig_path)
                    entries.append(
                        {"file": fig_path.name, "sha256": file_sha256(fig_path), "kind": "figure"}
                    )

                for pth, kind in ((ckpt_path, "checkpoint"), (report_path, "report")):
                    entries.append(
                        {
                            "file": pth.name,
                            "sha256": file_sha256(pth),
                            "kind": kind,
                            "optimizer": arm.name,
                            "seed": seed,
                        }
                    )
                results[(arm.name, seed)] = {
                    "checkpoint": str(ckpt_path),
                    "report": str(report_path),
                    "trained_final_mse": float(trained_curves[:, -1].mean()),
                    "random_final_mse": float(random_curves[:, -1].mean()),
                }
        manifest_path = out / "manifest.json"
        write_manifest(
            manifest_path,
            entries,
            extra={
                "problem": {"kind": cfg.problem.kind},
                "T": cfg.T,
                "seeds": cfg.seeds,
            },
        )
    except Exception:
        for f in written:
            f.unlink(missing_ok=True)
        raise
    return {"out_dir": str(out), "manifest": str(manifest_path), "runs": results}
