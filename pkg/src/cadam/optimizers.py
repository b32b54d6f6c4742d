"""Solvers for nested compositional problems behind one step interface.

The adaptive solver keeps, besides the usual first/second moment pair, a
tracking vector y that estimates the inner mean map g(x) and an extrapolated
query point z at which fresh inner values are drawn.  Baselines (two-timescale
compositional gradient descent with and without extrapolation, plain adaptive
moments, plain gradient steps) share the same oracles and report per-step
sample counts so runs can be compared on equal sample budgets.

All step functions are pure: they return a new state and never mutate inputs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    KIND_INNER_JAC,
    KIND_INNER_VALUE,
    KIND_OUTER_GRAD,
    KIND_OUTPUT_RULE,
    CompositionalProblem,
    InvalidConfigError,
    NumericFailureError,
    SampleStreams,
    ScheduleConfig,
    StepParams,
    sample_inner,
    sample_outer,
)
from .trace import RunTrace

OUTPUT_RULES = ("uniform-iterate", "last-iterate", "best-evaluated")


@dataclass(frozen=True)
class CAdamState:
    """Iterate, tracking vector, extrapolation point, moments, step counter."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int

    @classmethod
    def init(cls, problem: CompositionalProblem, x1: np.ndarray) -> "CAdamState":
        x1 = np.asarray(x1, dtype=float)
        if x1.shape != (problem.p,):
            raise ValueError(f"x1 has shape {x1.shape}, expected ({problem.p},)")
        return cls(
            x=x1.copy(),
            y=np.zeros(problem.q),
            z=x1.copy(),
            m=np.zeros(problem.p),
            v=np.zeros(problem.p),
            t=1,
        )


@dataclass(frozen=True)
class StepReport:
    """Oracle samples one step actually consumed, plus its gradient estimate."""

    inner_value_samples: int
    inner_grad_samples: int
    outer_grad_samples: int
    composite_grad_estimate: np.ndarray

    @property
    def samples(self) -> int:
        return self.inner_value_samples + self.inner_grad_samples + self.outer_grad_samples


def cadam_step(
    problem: CompositionalProblem,
    state: CAdamState,
    params: StepParams,
    streams: SampleStreams,
) -> tuple[CAdamState, StepReport]:
    """One adaptive compositional step.

    Order of operations: mean outer gradient at y_t (k1 samples), mean inner
    Jacobian at x_t (k2 samples), composite estimate = Jacobian-mean^T times
    outer-mean, moment updates, x update, extrapolation z, then the tracking
    update from k3 fresh inner values at the new z.
    """
    if not 0.0 < params.beta <= 1.0:
        raise InvalidConfigError(f"beta must lie in (0, 1], got {params.beta}")
    outer = sample_outer(
        problem, state.y, params.k1, streams.stream(state.t, KIND_OUTER_GRAD)
    )
    outer_mean = outer.mean(axis=0)
    inner = sample_inner(
        problem, state.x, params.k2, streams.stream(state.t, KIND_INNER_JAC)
    )
    est = inner.tmul(outer_mean)

    m = params.gamma1 * state.m + (1.0 - params.gamma1) * est
    v = params.gamma2 * state.v + (1.0 - params.gamma2) * est * est
    x_next = state.x - params.alpha * m / (np.sqrt(v) + params.epsilon)
    z_next = (1.0 - 1.0 / params.beta) * state.x + (1.0 / params.beta) * x_next

    values = sample_inner(
        problem, z_next, params.k3,
        streams.stream(state.t, KIND_INNER_VALUE), need_jacobian=False,
    ).values
    y_next = (1.0 - params.beta) * state.y + params.beta * values.mean(axis=0)

    next_state = CAdamState(x=x_next, y=y_next, z=z_next, m=m, v=v, t=state.t + 1)
    report = StepReport(
        inner_value_samples=params.k3,
        inner_grad_samples=params.k2,
        outer_grad_samples=params.k1,
        composite_grad_estimate=est,
    )
    return next_state, report


def _trace_row(problem, x, y, t, cumulative, alpha, beta, t0_ns):
    J = problem.exact_objective(x) if problem.exact_objective else float("nan")
    if problem.exact_gradient:
        g = problem.exact_gradient(x)
        grad_norm_sq = float(g @ g)
    else:
        grad_norm_sq = float("nan")
    if problem.exact_inner is not None and y is not None:
        d = problem.exact_inner(x) - y
        tracking = float(d @ d)
    else:
        tracking = float("nan")
    wall = time.monotonic_ns() - t0_ns
    return (t, cumulative, J, grad_norm_sq, tracking, alpha, beta, wall)


def _check_finite(x: np.ndarray, y: np.ndarray, t: int) -> None:
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise NumericFailureError(f"non-finite iterate at step {t}", t=t)


class _OutputSelector:
    """Tracks the returned iterate under the configured output rule.

    The uniform rule reservoir-samples the visited iterates x_1..x_T so it
    stays exactly uniform even when a sample budget stops the run early.
    """

    def __init__(self, rule: str, problem: CompositionalProblem,
                 streams: SampleStreams):
        if rule not in OUTPUT_RULES:
            raise InvalidConfigError(f"unknown output rule {rule!r}; choose from {OUTPUT_RULES}")
        if rule == "best-evaluated" and problem.exact_objective is None:
            raise InvalidConfigError("best-evaluated output rule needs exact_objective")
        self.rule = rule
        self.problem = problem
        self.rng = streams.stream(0, KIND_OUTPUT_RULE) if rule == "uniform-iterate" else None
        self.pick: Optional[np.ndarray] = None
        self.best = np.inf

    def consider(self, x: np.ndarray, t: int) -> None:
        """Offer iterate x_t (entering step t)."""
        if self.rule == "uniform-iterate":
            if self.rng.random() < 1.0 / t:
                self.pick = x.copy()
        elif self.rule == "best-evaluated":
            J = self.problem.exact_objective(x)
            if J < self.best:
                self.best = J
                self.pick = x.copy()

    def finish(self, x_final: np.ndarray) -> np.ndarray:
        if self.rule == "last-iterate":
            return x_final.copy()
        if self.rule == "best-evaluated":
            self.consider(x_final, -1)
        return self.pick


def cadam_run(
    problem: CompositionalProblem,
    x1: np.ndarray,
    cfg: ScheduleConfig,
    T: int,
    streams: SampleStreams,
    output_rule: str = "uniform-iterate",
    checkpoints: Optional[Sequence[int]] = None,
    sample_budget: Optional[int] = None,
    post_step: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> tuple[np.ndarray, RunTrace]:
    """Run the adaptive compositional solver for up to T steps.

    Trace rows are appended at every iteration unless ``checkpoints`` narrows
    them down.  ``sample_budget`` stops the run once cumulative oracle samples
    reach the budget.  ``post_step`` (optional) maps the iterate after each
    step; the harness uses it for box clipping.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    state = CAdamState.init(problem, x1)
    selector = _OutputSelector(output_rule, problem, streams)
    marks = set(range(1, T + 1)) if checkpoints is None else set(checkpoints)
    rows = []
    cumulative = 0
    t0_ns = time.monotonic_ns()
    for t in range(1, T + 1):
        selector.consider(state.x, t)
        params = cfg.at(t)
        state, report = cadam_step(problem, state, params, streams)
        if post_step is not None:
            state = replace(state, x=post_step(state.x))
        _check_finite(state.x, state.y, t)
        cumulative += report.samples
        if t in marks:
            rows.append(_trace_row(problem, state.x, state.y, t, cumulative,
                                   params.alpha, params.beta, t0_ns))
        if sample_budget is not None and cumulative >= sample_budget:
            break
    x_out = selector.finish(state.x)
    return x_out, RunTrace.from_rows(rows)


# ---------------------------------------------------------------------------
# Baselines


@dataclass(frozen=True)
class BaselineState:
    """Iterate and tracking vector of the two-timescale baselines."""

    x: np.ndarray
    y: np.ndarray

    @classmethod
    def init(cls, problem: CompositionalProblem, x1: np.ndarray) -> "BaselineState":
        x1 = np.asarray(x1, dtype=float)
        if x1.shape != (problem.p,):
            raise ValueError(f"x1 has shape {x1.shape}, expected ({problem.p},)")
        return cls(x=x1.copy(), y=np.zeros(problem.q))


@dataclass(frozen=True)
class BaselineSchedule:
    """Power-law step sizes alpha_t = C_alpha/t^a, beta_t = min(1, C_beta/t^b)."""

    C_alpha: float = 0.1
    C_beta: float = 1.0
    a: float = 0.75
    b: float = 0.5
    k1: int = 1
    k2: int = 1
    k3: int = 1

    def __post_init__(self):
        if self.C_alpha <= 0 or self.C_beta <= 0:
            raise InvalidConfigError("baseline step constants must be positive")
        if min(self.k1, self.k2, self.k3) < 1:
            raise InvalidConfigError("baseline batch sizes must be >= 1")

    def alpha(self, t: int) -> float:
        return self.C_alpha / t**self.a

    def beta(self, t: int) -> float:
        return min(1.0, self.C_beta / t**self.b)


# Two-timescale defaults: the plain method's nonconvex setting, and the
# accelerated variant's (extrapolated) setting.  Both fully configurable.
SCGD_DEFAULT = BaselineSchedule(a=0.75, b=0.5)
ASCPG_DEFAULT = BaselineSchedule(a=5.0 / 7.0, b=4.0 / 7.0)


def scgd_step(
    problem: CompositionalProblem,
    state: BaselineState,
    t: int,
    streams: SampleStreams,
    sched: BaselineSchedule = SCGD_DEFAULT,
) -> tuple[BaselineState, StepReport]:
    """Plain two-timescale step: track at x_t, then a raw gradient step.

    y_{t+1} = (1-beta_t) y_t + beta_t * sampled g(x_t);
    x_{t+1} = x_t - alpha_t * sampled_grad_g(x_t)^T sampled_grad_f(y_{t+1}).
    """
    alpha, beta = sched.alpha(t), sched.beta(t)
    values = sample_inner(
        problem, state.x, sched.k3,
        streams.stream(t, KIND_INNER_VALUE), need_jacobian=False,
    ).values
    y_next = (1.0 - beta) * state.y + beta * values.mean(axis=0)
    outer_mean = sample_outer(
        problem, y_next, sched.k1, streams.stream(t, KIND_OUTER_GRAD)
    ).mean(axis=0)
    inner = sample_inner(
        problem, state.x, sched.k2, streams.stream(t, KIND_INNER_JAC)
    )
    est = inner.tmul(outer_mean)
    x_next = state.x - alpha * est
    report = StepReport(sched.k3, sched.k2, sched.k1, est)
    return BaselineState(x=x_next, y=y_next), report


def ascpg_step(
    problem: CompositionalProblem,
    state: BaselineState,
    t: int,
    streams: SampleStreams,
    sched: BaselineSchedule = ASCPG_DEFAULT,
) -> tuple[BaselineState, StepReport]:
    """Extrapolated two-timescale step: non-adaptive x update, tracking at z.

    Uses the same extrapolation z_{t+1} = (1 - 1/beta) x_t + (1/beta) x_{t+1}
    and y update as the adaptive solver, but a plain gradient step for x.
    """
    alpha, beta = sched.alpha(t), sched.beta(t)
    outer_mean = sample_outer(
        problem, state.y, sched.k1, streams.stream(t, KIND_OUTER_GRAD)
    ).mean(axis=0)
    inner = sample_inner(
        problem, state.x, sched.k2, streams.stream(t, KIND_INNER_JAC)
    )
    est = inner.tmul(outer_mean)
    x_next = state.x - alpha * est
    z_next = (1.0 - 1.0 / beta) * state.x + (1.0 / beta) * x_next
    values = sample_inner(
        problem, z_next, sched.k3,
        streams.stream(t, KIND_INNER_VALUE), need_jacobian=False,
    ).values
    y_next = (1.0 - beta) * state.y + beta * values.mean(axis=0)
    report = StepReport(sched.k3, sched.k2, sched.k1, est)
    return BaselineState(x=x_next, y=y_next), report


def _baseline_run(step_fn, sched, problem, x1, T, streams,
                  checkpoints, sample_budget, post_step):
    state = BaselineState.init(problem, x1)
    marks = set(range(1, T + 1)) if checkpoints is None else set(checkpoints)
    rows = []
    cumulative = 0
    t0_ns = time.monotonic_ns()
    for t in range(1, T + 1):
        state, report = step_fn(problem, state, t, streams, sched)
        if post_step is not None:
            state = replace(state, x=post_step(state.x))
        _check_finite(state.x, state.y, t)
        cumulative += report.samples
        if t in marks:
            rows.append(_trace_row(problem, state.x, state.y, t, cumulative,
                                   sched.alpha(t), sched.beta(t), t0_ns))
        if sample_budget is not None and cumulative >= sample_budget:
            break
    return state.x.copy(), RunTrace.from_rows(rows)


def scgd_run(problem, x1, T, streams, sched: BaselineSchedule = SCGD_DEFAULT,
             checkpoints=None, sample_budget=None, post_step=None):
    return _baseline_run(scgd_step, sched, problem, x1, T, streams,
                         checkpoints, sample_budget, post_step)


def ascpg_run(problem, x1, T, streams, sched: BaselineSchedule = ASCPG_DEFAULT,
              checkpoints=None, sample_budget=None, post_step=None):
    return _baseline_run(ascpg_step, sched, problem, x1, T, streams,
                         checkpoints, sample_budget, post_step)


# ---------------------------------------------------------------------------
# Non-compositional reference optimizers


@dataclass(frozen=True)
class AdamState:
    """Reference adaptive-moment state (no bias correction)."""

    x: np.ndarray
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def init(cls, x1: np.ndarray) -> "AdamState":
        x1 = np.asarray(x1, dtype=float)
        return cls(x=x1.copy(), m=np.zeros_like(x1), v=np.zeros_like(x1))


def adam_step(
    state: AdamState,
    gradient: np.ndarray,
    alpha: float,
    beta1: float,
    beta2: float,
    epsilon: float = 1e-8,
) -> AdamState:
    """One adaptive-moment step without bias correction."""
    m = beta1 * state.m + (1.0 - beta1) * gradient
    v = beta2 * state.v + (1.0 - beta2) * gradient * gradient
    x = state.x - alpha * m / (np.sqrt(v) + epsilon)
    return AdamState(x=x, m=m, v=v)


def sgd_step(x: np.ndarray, gradient: np.ndarray, alpha: float) -> np.ndarray:
    """Plain gradient step x - alpha * gradient."""
    return np.asarray(x, dtype=float) - alpha * np.asarray(gradient, dtype=float)
