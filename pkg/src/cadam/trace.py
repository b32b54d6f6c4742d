"""Per-run trace records, their CSV serialization, and manifest hashing.

A trace row is written after the solver step at iteration t and measures the
post-step iterate: cumulative oracle samples consumed through step t, the
exact objective and squared gradient norm (NaN when the problem has no exact
forms), the squared tracking error, the step sizes used, and wall time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TRACE_COLUMNS = (
    "t",
    "cumulative_samples",
    "J_exact",
    "grad_norm_sq",
    "tracking_err",
    "alpha_t",
    "beta_t",
    "wallclock_ns",
)

_INT_COLUMNS = {"t", "cumulative_samples", "wallclock_ns"}


@dataclass
class RunTrace:
    """Columnar per-checkpoint record of one optimization run."""

    t: np.ndarray
    cumulative_samples: np.ndarray
    J_exact: np.ndarray
    grad_norm_sq: np.ndarray
    tracking_err: np.ndarray
    alpha_t: np.ndarray
    beta_t: np.ndarray
    wallclock_ns: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.cumulative_samples = np.asarray(self.cumulative_samples, dtype=np.int64)
        self.wallclock_ns = np.asarray(self.wallclock_ns, dtype=np.int64)
        for name in ("J_exact", "grad_norm_sq", "tracking_err", "alpha_t", "beta_t"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if len(self.t) > 1:
            if not np.all(np.diff(self.t) > 0):
                raise ValueError("trace iteration indices must be strictly increasing")
            if not np.all(np.diff(self.cumulative_samples) >= 0):
                raise ValueError("cumulative sample counts must be nondecreasing")

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_rows(cls, rows: Sequence[tuple]) -> "RunTrace":
        if rows:
            cols = list(zip(*rows))
        else:
            cols = [[] for _ in TRACE_COLUMNS]
        return cls(*[np.asarray(c) for c in cols])

    def to_csv(self, path) -> None:
        """Write the trace. Floats carry 17 significant digits."""
        lines = [",".join(TRACE_COLUMNS)]
        for i in range(len(self)):
            cells = []
            for name in TRACE_COLUMNS:
                value = getattr(self, name)[i]
                if name in _INT_COLUMNS:
                    cells.append(str(int(value)))
                else:
                    cells.append(format(float(value), ".17g"))
            lines.append(",".join(cells))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "RunTrace":
        text = Path(path).read_text().strip()
        lines = text.splitlines()
        header = lines[0].split(",")
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header in {path}: {header}")
        rows = [tuple(float(c) for c in line.split(",")) for line in lines[1:]]
        return cls.from_rows(rows)


def geometric_checkpoints(T: int) -> list[int]:
    """Log-spaced checkpoint set {1, 2, 4, ...} with the endpoint included."""
    if T < 1:
        raise ValueError("T must be >= 1")
    points = []
    t = 1
    while t <= T:
        points.append(t)
        t *= 2
    if points[-1] != T:
        points.append(T)
    return points


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, entries: Iterable[dict], extra: dict | None = None) -> None:
    """List every emitted file with its content hash, plus run metadata."""
    payload = {"files": list(entries)}
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
