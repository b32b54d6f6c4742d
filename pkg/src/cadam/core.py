"""Core abstractions for two-level nested stochastic optimization.

A problem here is J(x) = E_nu[ f_nu( E_omega[ g_omega(x) ] ) ] with a
p-dimensional decision variable and a q-dimensional inner image.  Everything
an optimizer needs is packaged behind two sampling oracles: the inner oracle
returns values and Jacobians of g_omega, the outer oracle returns gradients
of f_nu.  This module also owns the per-step parameter schedules and the
deterministic-randomness contract shared by all optimizers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class InvalidConfigError(ValueError):
    """A schedule or recursion configuration violates its constraints."""


class DimensionMismatchError(ValueError):
    """An input vector does not match the problem's declared dimensions."""


class NumericFailureError(RuntimeError):
    """NaN or Inf appeared in the iterates of a run."""

    def __init__(self, message: str, t: int):
        super().__init__(message)
        self.t = t


# Oracle-kind codes for the per-(iteration, kind) stream split.  Fixed and
# public: replaying a single oracle call of a run only needs (seed, t, kind).
KIND_OUTER_GRAD = 0
KIND_INNER_JAC = 1
KIND_INNER_VALUE = 2
KIND_TASKS = 3
KIND_INIT = 4
KIND_EVAL = 5
KIND_OUTPUT_RULE = 6


class SampleStreams:
    """Deterministic family of independent random streams from one root seed.

    Each (iteration, kind) pair gets its own child generator, so changing the
    batch size consumed at one step never perturbs the draws of any later
    step or of the other oracles at the same step.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def stream(self, iteration: int, kind: int) -> np.random.Generator:
        key = np.random.SeedSequence(self.seed, spawn_key=(int(iteration), int(kind)))
        return np.random.Generator(np.random.SFC64(key))


@dataclass(frozen=True)
class InnerBatch:
    """One inner-oracle call: K coupled (value, Jacobian) samples.

    ``jacobians`` holds the dense (K, q, p) stack when the problem can afford
    it.  Problems whose Jacobian is only available as an operator (e.g. the
    one-gradient-step map of meta-learning, whose Jacobian action needs a
    Hessian-vector product) supply ``jac_tmul`` instead: the action of the
    *mean* Jacobian transpose on a vector in R^q.
    """

    values: np.ndarray
    jacobians: Optional[np.ndarray] = None
    jac_tmul: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def mean_value(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def mean_jacobian(self) -> np.ndarray:
        if self.jacobians is None:
            raise ValueError("this batch carries an operator-form Jacobian only")
        return self.jacobians.mean(axis=0)

    def tmul(self, u: np.ndarray) -> np.ndarray:
        """Mean-Jacobian-transpose times u (the composite-gradient kernel)."""
        if self.jacobians is not None:
            return self.mean_jacobian().T @ u
        if self.jac_tmul is None:
            raise ValueError("batch was sampled without Jacobian information")
        return self.jac_tmul(u)


@dataclass
class CompositionalProblem:
    """Oracle-backed pair (f_nu, g_omega) with decision dim p, image dim q.

    ``inner(z, K, rng, need_jacobian)`` returns an InnerBatch of K i.i.d.
    samples; ``outer(y, K, rng)`` returns a (K, q) stack of sampled outer
    gradients.  Finite-sum problems may also expose exact quantities and
    enumeration over all atoms (brute-force tests only).
    """

    p: int
    q: int
    inner: Callable[[np.ndarray, int, np.random.Generator, bool], InnerBatch]
    outer: Callable[[np.ndarray, int, np.random.Generator], np.ndarray]
    exact_inner: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact_objective: Optional[Callable[[np.ndarray], float]] = None
    exact_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    enumerate_inner: Optional[Callable[[np.ndarray], InnerBatch]] = None
    enumerate_outer: Optional[Callable[[np.ndarray], np.ndarray]] = None
    content_hash: Optional[str] = None


def sample_inner(
    problem: CompositionalProblem,
    z: np.ndarray,
    K: int,
    rng: np.random.Generator,
    need_jacobian: bool = True,
) -> InnerBatch:
    """K i.i.d. samples of (g_omega(z), grad g_omega(z)) from the inner oracle."""
    z = np.asarray(z, dtype=float)
    if z.shape != (problem.p,):
        raise DimensionMismatchError(
            f"inner oracle point has shape {z.shape}, expected ({problem.p},)"
        )
    if K < 1:
        raise ValueError(f"batch size must be >= 1, got {K}")
    batch = problem.inner(z, int(K), rng, need_jacobian)
    if batch.values.shape != (K, problem.q):
        raise DimensionMismatchError(
            f"inner oracle returned values of shape {batch.values.shape}, "
            f"expected ({K}, {problem.q})"
        )
    return batch


def sample_outer(
    problem: CompositionalProblem,
    y: np.ndarray,
    K: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """K i.i.d. sampled gradients of f_nu at y, stacked as (K, q)."""
    y = np.asarray(y, dtype=float)
    if y.shape != (problem.q,):
        raise DimensionMismatchError(
            f"outer oracle point has shape {y.shape}, expected ({problem.q},)"
        )
    if K < 1:
        raise ValueError(f"batch size must be >= 1, got {K}")
    grads = problem.outer(y, int(K), rng)
    if grads.shape != (K, problem.q):
        raise DimensionMismatchError(
            f"outer oracle returned shape {grads.shape}, expected ({K}, {problem.q})"
        )
    return grads


# The v-average weight gamma2 is clamped below 1 by this margin so v stays a
# valid moving average even when the schedule formula leaves [0, 1].
_GAMMA2_CAP = 1.0 - 1e-12


def _batch_ceil(value: float) -> int:
    """Round a batch size up, snapping values a float-rounding hair away from
    an integer back to it (t**c can land at 16.000000000000004)."""
    nearest = round(value)
    if abs(value - nearest) < 1e-9 * max(1.0, abs(value)):
        return max(1, int(nearest))
    return max(1, math.ceil(value))


@dataclass(frozen=True)
class StepParams:
    """Evaluated per-step values of the schedule."""

    alpha: float
    beta: float
    k1: int
    k2: int
    k3: int
    gamma1: float
    gamma2: float
    epsilon: float

    @property
    def samples(self) -> int:
        """Oracle samples one solver step consumes under these parameters."""
        return self.k1 + self.k2 + self.k3


@dataclass(frozen=True)
class ScheduleConfig:
    """Constants and exponents of the power-law step/batch schedule.

    Per step t >= 1:

        alpha_t  = C_alpha / t^a
        beta_t   = C_beta  / t^b
        K1_t     = ceil(C_1 * t^c),  K2_t = ceil(C_2 * t^c),
        K3_t     = ceil(C_3 * t^e)
        gamma1_t = C_gamma * mu^t
        gamma2_t = clamp(1 - (C_alpha / t^(2a)) * (1 - gamma1_t)^2, 0, 1-1e-12)

    Defaults follow the analyzed setup (a=1/5, b=0, c=e=4/5) with the
    portfolio benchmark constants.
    """

    C_alpha: float = 0.01
    C_beta: float = 0.01
    C_1: float = 1.0
    C_2: float = 1.0
    C_3: float = 1.0
    C_gamma: float = 1.0
    mu: float = 0.9
    epsilon: float = 1e-8
    a: float = 0.2
    b: float = 0.0
    c: float = 0.8
    e: float = 0.8

    def __post_init__(self):
        for name in ("C_alpha", "C_beta", "C_1", "C_2", "C_3", "C_gamma", "epsilon"):
            if not getattr(self, name) > 0:
                raise InvalidConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.mu < 1.0:
            raise InvalidConfigError(f"mu must lie in (0, 1), got {self.mu}")
        if self.C_beta > 1.0:
            raise InvalidConfigError(f"C_beta must lie in (0, 1], got {self.C_beta}")
        if self.C_gamma > 1.0:
            raise InvalidConfigError(f"C_gamma must lie in (0, 1], got {self.C_gamma}")
        for name in ("a", "b", "c", "e"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"exponent {name} must be >= 0, got {getattr(self, name)}")

    @property
    def decay_feasible(self) -> bool:
        """Whether the tracking-error decay analysis applies to these exponents."""
        gap = 2.0 * self.a - 2.0 * self.b
        return not (-1.0 <= gap <= 0.0) and self.b <= 1.0

    def at(self, t: int) -> StepParams:
        """Evaluate the schedule at iteration t >= 1."""
        if t < 1:
            raise ValueError(f"iteration index must be >= 1, got {t}")
        alpha = self.C_alpha / t**self.a
        beta = self.C_beta / t**self.b
        k1 = _batch_ceil(self.C_1 * t**self.c)
        k2 = _batch_ceil(self.C_2 * t**self.c)
        k3 = _batch_ceil(self.C_3 * t**self.e)
        gamma1 = self.C_gamma * self.mu**t
        gamma2 = 1.0 - (self.C_alpha / t ** (2.0 * self.a)) * (1.0 - gamma1) ** 2
        gamma2 = min(max(gamma2, 0.0), _GAMMA2_CAP)
        return StepParams(
            alpha=alpha,
            beta=beta,
            k1=k1,
            k2=k2,
            k3=k3,
            gamma1=gamma1,
            gamma2=gamma2,
            epsilon=self.epsilon,
        )


def portfolio_schedule(**overrides) -> ScheduleConfig:
    """Benchmark constants for the mean-variance runs: unit batches, small steps."""
    base = dict(C_alpha=0.01, C_beta=0.01, C_1=1.0, C_2=1.0, C_3=1.0,
                C_gamma=1.0, c=0.0, e=0.0)
    base.update(overrides)
    return ScheduleConfig(**base)


def meta_schedule(**overrides) -> ScheduleConfig:
    """Benchmark constants for the sine-regression meta-learning runs."""
    base = dict(C_alpha=0.001, C_beta=0.99, C_1=10.0, C_2=10.0, C_3=10.0,
                C_gamma=1.0, c=0.0, e=0.0)
    base.update(overrides)
    return ScheduleConfig(**base)


def composite_smoothness(M_g: float, L_f: float, L_g: float, M_f: float) -> float:
    """Smoothness constant of the composed objective: M_g^2 * L_f + L_g * M_f."""
    if min(M_g, L_f, L_g, M_f) < 0:
        raise ValueError("smoothness/boundedness constants must be nonnegative")
    return M_g**2 * L_f + L_g * M_f


@dataclass(frozen=True)
class ProblemConstants:
    """Boundedness, smoothness and oracle-variance constants of a problem.

    May hold exact values or empirical estimates; all nonnegative.
    """

    B_f: float = 0.0
    M_f: float = 0.0
    M_g: float = 0.0
    L_f: float = 0.0
    L_g: float = 0.0
    sigma1_sq: float = 0.0
    sigma2_sq: float = 0.0
    sigma3_sq: float = 0.0

    def __post_init__(self):
        for name in ("B_f", "M_f", "M_g", "L_f", "L_g",
                     "sigma1_sq", "sigma2_sq", "sigma3_sq"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def L(self) -> float:
        return composite_smoothness(self.M_g, self.L_f, self.L_g, self.M_f)
