"""Meta-learning as a nested composition: one-gradient-step adaptation.

The inner map sends parameters x to x - alpha * grad L(x; batch) (expected
over data batches); the outer loss evaluates adapted parameters on fresh
batches.  Two reductions are provided: a single task with streaming data
(q = p), and a meta-batch of K tasks whose adapted parameter columns are
stacked column-major into a q = p*K vector.

The inner Jacobian I - alpha * H is never materialized: batches expose its
transpose action through Hessian-vector products, which is all the composite
gradient needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .core import CompositionalProblem, InnerBatch
from .nets import Mlp, hvp, mlp_loss_grad, mlp_mse
from .optimizers import sgd_step

AMPLITUDE_RANGE = (0.1, 5.0)
PHASE_RANGE = (0.0, 2.0 * np.pi)
INPUT_RANGE = (-5.0, 5.0)
DEFAULT_SHOTS = 10


@dataclass(frozen=True)
class SineTask:
    """One regression task: predict amplitude * sin(input + phase)."""

    amplitude: float
    phase: float

    def __post_init__(self):
        if not AMPLITUDE_RANGE[0] <= self.amplitude <= AMPLITUDE_RANGE[1]:
            raise ValueError(f"amplitude {self.amplitude} outside {AMPLITUDE_RANGE}")
        if not PHASE_RANGE[0] <= self.phase <= PHASE_RANGE[1]:
            raise ValueError(f"phase {self.phase} outside {PHASE_RANGE}")

    def targets(self, inputs: np.ndarray) -> np.ndarray:
        return self.amplitude * np.sin(np.asarray(inputs, dtype=float) + self.phase)


def sample_task(rng: np.random.Generator) -> SineTask:
    return SineTask(
        amplitude=rng.uniform(*AMPLITUDE_RANGE),
        phase=rng.uniform(*PHASE_RANGE),
    )


@dataclass(frozen=True)
class TaskBatch:
    """M (input, target) pairs of one task; targets exactly follow the task rule."""

    task: SineTask
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=float))
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=float))
        if self.inputs.shape != self.targets.shape or self.inputs.ndim != 1:
            raise ValueError("inputs and targets must be matching 1-D arrays")
        if not np.array_equal(self.targets, self.task.targets(self.inputs)):
            raise ValueError("targets do not follow the task's target rule")


def sample_batch(task: SineTask, M: int, rng: np.random.Generator) -> TaskBatch:
    inputs = rng.uniform(*INPUT_RANGE, size=M)
    return TaskBatch(task=task, inputs=inputs, targets=task.targets(inputs))


def _adapted(net: Mlp, z: np.ndarray, batch: TaskBatch, alpha_inner: float) -> np.ndarray:
    _, g = mlp_loss_grad(net, batch)
    return z - alpha_inner * g


def _merge_batches(batches: Sequence[TaskBatch]) -> TaskBatch:
    if len(batches) == 1:
        return batches[0]
    return TaskBatch(
        task=batches[0].task,
        inputs=np.concatenate([b.inputs for b in batches]),
        targets=np.concatenate([b.targets for b in batches]),
    )


def single_task_meta_problem(
    template: Mlp,
    task: SineTask,
    alpha_inner: float,
    M: int = DEFAULT_SHOTS,
    frozen: Optional[TaskBatch] = None,
) -> CompositionalProblem:
    """Single-task reduction (streaming data): p = q = parameter count.

    With ``frozen`` set, every oracle call reuses that one batch, making the
    problem deterministic; exact forms are then available (used by the
    gradient checks and tracking diagnostics).
    """
    if alpha_inner < 0:
        raise ValueError("alpha_inner must be >= 0")
    p = template.n_params

    def draw(rng) -> TaskBatch:
        return frozen if frozen is not None else sample_batch(task, M, rng)

    def inner(z, K, rng, need_jacobian=True):
        net = template.with_vector(z)
        batches = [draw(rng) for _ in range(K)]
        values = np.empty((K, p))
        for i, b in enumerate(batches):
            values[i] = _adapted(net, z, b, alpha_inner)

        def tmul(u):
            # the loss sums over points, so the mean of per-batch Hessian
            # actions is one Hessian-vector product on the merged batch
            acc = hvp(net, _merge_batches(batches), u)
            return u - alpha_inner * (acc / K)

        return InnerBatch(values=values, jac_tmul=tmul)

    def outer(y, K, rng):
        net = template.with_vector(y)
        grads = np.empty((K, p))
        for i in range(K):
            _, grads[i] = mlp_loss_grad(net, draw(rng))
        return grads

    exact_inner = exact_objective = None
    if frozen is not None:
        def exact_inner(x):
            return _adapted(template.with_vector(x), x, frozen, alpha_inner)

        def exact_objective(x):
            loss, _ = mlp_loss_grad(template.with_vector(exact_inner(x)), frozen)
            return loss

    return CompositionalProblem(
        p=p, q=p, inner=inner, outer=outer,
        exact_inner=exact_inner, exact_objective=exact_objective,
    )


def multi_task_meta_problem(
    template: Mlp,
    tasks: Sequence[SineTask],
    alpha_inner: float,
    M: int = DEFAULT_SHOTS,
    frozen: Optional[List[TaskBatch]] = None,
) -> CompositionalProblem:
    """Meta-batch reduction over K tasks: q = p * K.

    The inner image stacks per-task adapted parameters column-major; the
    outer loss averages per-task losses of the corresponding columns.  With
    K = 1 this reproduces the single-task problem draw for draw.
    """
    if alpha_inner < 0:
        raise ValueError("alpha_inner must be >= 0")
    tasks = list(tasks)
    if not tasks:
        raise ValueError("need at least one task")
    if frozen is not None and len(frozen) != len(tasks):
        raise ValueError("frozen batches must match the task list")
    K_tasks = len(tasks)
    p = template.n_params
    q = p * K_tasks

    def draw(rng) -> List[TaskBatch]:
        if frozen is not None:
            return frozen
        return [sample_batch(tj, M, rng) for tj in tasks]

    def inner(z, K, rng, need_jacobian=True):
        net = template.with_vector(z)
        per_sample = []
        values = np.empty((K, q))
        for i in range(K):
            bs = draw(rng)
            per_sample.append(bs)
            for j, b in enumerate(bs):
                values[i, j * p:(j + 1) * p] = _adapted(net, z, b, alpha_inner)

        def tmul(u):
            out = np.zeros(p)
            for j in range(K_tasks):
                uj = u[j * p:(j + 1) * p]
                acc = hvp(net, _merge_batches([bs[j] for bs in per_sample]), uj)
                out += uj - alpha_inner * (acc / K)
            return out

        return InnerBatch(values=values, jac_tmul=tmul)

    def outer(y, K, rng):
        nets = [template.with_vector(y[j * p:(j + 1) * p]) for j in range(K_tasks)]
        grads = np.empty((K, q))
        for i in range(K):
            bs = draw(rng)
            for j in range(K_tasks):
                _, g = mlp_loss_grad(nets[j], bs[j])
                grads[i, j * p:(j + 1) * p] = g / K_tasks
        return grads

    exact_inner = exact_objective = None
    if frozen is not None:
        def exact_inner(x):
            net = template.with_vector(x)
            return np.concatenate(
                [_adapted(net, x, b, alpha_inner) for b in frozen]
            )

        def exact_objective(x):
            cols = exact_inner(x)
            total = 0.0
            for j, b in enumerate(frozen):
                loss, _ = mlp_loss_grad(template.with_vector(cols[j * p:(j + 1) * p]), b)
                total += loss
            return total / K_tasks

    return CompositionalProblem(
        p=p, q=q, inner=inner, outer=outer,
        exact_inner=exact_inner, exact_objective=exact_objective,
    )


def fine_tune_curve(
    template: Mlp,
    x_meta: np.ndarray,
    task: SineTask,
    steps: int = 10,
    alpha_inner: float = 0.01,
    rng: Optional[np.random.Generator] = None,
    M: int = DEFAULT_SHOTS,
) -> np.ndarray:
    """Held-out MSE after 0..steps gradient steps on one M-point batch.

    Every gradient step reuses the same adaptation batch; the held-out batch
    is drawn once, right after it.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    adapt = sample_batch(task, M, rng)
    heldout = sample_batch(task, M, rng)
    x = np.asarray(x_meta, dtype=float).copy()
    curve = [mlp_mse(template.with_vector(x), heldout)]
    for _ in range(steps):
        _, g = mlp_loss_grad(template.with_vector(x), adapt)
        x = sgd_step(x, g, alpha_inner)
        curve.append(mlp_mse(template.with_vector(x), heldout))
    return np.asarray(curve)


def fine_tune_eval(
    template: Mlp,
    x_meta: np.ndarray,
    task: SineTask,
    steps: int = 10,
    alpha_inner: float = 0.01,
    rng: Optional[np.random.Generator] = None,
    M: int = DEFAULT_SHOTS,
) -> float:
    """Test MSE after adapting x_meta to the task for ``steps`` gradient steps."""
    return float(fine_tune_curve(template, x_meta, task, steps, alpha_inner, rng, M)[-1])
