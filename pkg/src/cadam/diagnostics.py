"""Numeric verification of problem constants and proof-side recursions.

Nothing here proves anything: these tools iterate the tracking-error upper
envelopes as equalities, certify the power-decay recursion bound against its
own constant, estimate boundedness/smoothness/variance constants empirically,
and fit decay exponents to observed traces, so the analysis can be checked at
desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import (
    CompositionalProblem,
    InvalidConfigError,
    ProblemConstants,
    ScheduleConfig,
    sample_inner,
    sample_outer,
)
from .trace import RunTrace


def tracking_error(problem: CompositionalProblem, state) -> float:
    """Squared distance between the exact inner mean at the iterate and the
    tracking vector: ||g(x) - y||_2^2.  Needs a problem with exact_inner."""
    if problem.exact_inner is None:
        raise ValueError("tracking error needs a problem with exact_inner")
    d = problem.exact_inner(state.x) - state.y
    return float(d @ d)


@dataclass(frozen=True)
class TrackingBound:
    """One step of the tracking-error envelope recursion."""

    D: float
    F_sq: float
    E_sq: float

    def envelope(self, L_g: float) -> float:
        return 0.5 * L_g**2 * self.D**2 + 2.0 * self.E_sq


def tracking_bound_recursion(
    cfg: ScheduleConfig,
    constants: ProblemConstants,
    T: int,
    e1_sq: float = 0.0,
) -> list[TrackingBound]:
    """Iterate the three envelope recursions as equalities for t = 1..T.

    D_1 = F_1 = 0 and E_1^2 = e1_sq (the squared inner-mean norm at the start,
    since the tracking vector starts at zero).  Within a step, the drift term
    D_{t+1} consumes F_t^2 before F itself advances.

        D_{t+1}   = (1-beta_t) D_t + 2 (M_g M_f alpha_t)^2/(eps^2 beta_t) + beta_t F_t^2
        F_{t+1}^2 = (1-beta_t) F_t^2 + 4 (M_g M_f alpha_t)^2/(eps^2 beta_t)
        E_{t+1}^2 = (1-beta_t)^2 E_t^2 + beta_t^2 sigma3^2 / K3_t
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    M2 = (constants.M_g * constants.M_f) ** 2
    D, F_sq, E_sq = 0.0, 0.0, float(e1_sq)
    out = [TrackingBound(D, F_sq, E_sq)]
    for t in range(1, T):
        s = cfg.at(t)
        drive = M2 * s.alpha**2 / (cfg.epsilon**2 * s.beta)
        D, F_sq, E_sq = (
            (1.0 - s.beta) * D + 2.0 * drive + s.beta * F_sq,
            (1.0 - s.beta) * F_sq + 4.0 * drive,
            (1.0 - s.beta) ** 2 * E_sq + s.beta**2 * constants.sigma3_sq / s.k3,
        )
        out.append(TrackingBound(D, F_sq, E_sq))
    return out


def envelope_burn_in(bounds: Sequence[TrackingBound], L_g: float) -> int:
    """Smallest t such that the envelope is nonincreasing from t onward.

    Returns len(bounds) if the envelope still rises at the end.
    """
    env = np.array([b.envelope(L_g) for b in bounds])
    rising = np.nonzero(env[1:] > env[:-1] * (1.0 + 1e-12))[0]
    if len(rising) == 0:
        return 1
    return int(rising[-1]) + 2


def theta_coefficients(betas: Sequence[float]) -> np.ndarray:
    """Convex-combination weights theta_j^(t) of the tracking update history.

    Given beta_1..beta_t, returns (theta_0, ..., theta_t) with the convention
    beta_0 = 1:  theta_j = beta_j * prod_{i=j+1..t} (1 - beta_i), theta_t =
    beta_t.  They always sum to one.
    """
    beta = np.concatenate([[1.0], np.asarray(betas, dtype=float)])
    t = len(beta) - 1
    theta = np.empty(t + 1)
    theta[t] = beta[t]
    tail = 1.0
    for j in range(t - 1, -1, -1):
        tail *= 1.0 - beta[j + 1]
        theta[j] = beta[j] * tail
    return theta


@dataclass(frozen=True)
class DecayRecursionConfig:
    """Contraction recursion A_{t+1} = (1 - eta_t + C_1 eta_t^2) A_t + C_2 zeta_t
    with eta_t = C_eta/t^a and zeta_t = C_zeta/t^b."""

    C_eta: float
    C_zeta: float
    C_1: float
    C_2: float
    a: float
    b: float
    A_1: float = 0.0

    def __post_init__(self):
        if min(self.C_eta, self.C_zeta, self.C_1, self.C_2) < 0:
            raise InvalidConfigError("recursion constants must be nonnegative")
        if not 0.0 < self.a <= 1.0:
            raise InvalidConfigError(f"exponent a must lie in (0, 1], got {self.a}")
        if -1.0 <= self.b - self.a <= 0.0:
            raise InvalidConfigError(f"(b - a) must lie outside [-1, 0], got {self.b - self.a}")
        if self.A_1 < 0:
            raise InvalidConfigError("A_1 must be nonnegative")
        if self.C_eta <= 1.0 + self.b - self.a:
            raise InvalidConfigError(
                f"hypothesis violation: need C_eta > 1 + b - a = {1.0 + self.b - self.a}, "
                f"got {self.C_eta}"
            )


@dataclass(frozen=True)
class DecayCertificate:
    """Iterated sequence, its certified decay constant, and the verdict."""

    A: np.ndarray
    C_A: float
    bound: np.ndarray
    holds: bool


def certify_power_decay(cfg: DecayRecursionConfig, T: int) -> DecayCertificate:
    """Iterate the recursion exactly and check A_t <= C_A / t^(b-a) for t <= T.

    C_A follows the constructive definition: the burn-in maximum of
    A_t * t^(b-a) over t <= (C_1 C_eta^2)^(1/a) + 1, plus
    C_2 C_zeta / (C_eta - 1 - b + a).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    burn = (cfg.C_1 * cfg.C_eta**2) ** (1.0 / cfg.a)
    t_max = max(1, int(np.floor(burn + 1.0)))
    horizon = max(T, t_max)

    A = np.empty(horizon)
    A[0] = cfg.A_1
    for t in range(1, horizon):
        eta = cfg.C_eta / t**cfg.a
        zeta = cfg.C_zeta / t**cfg.b
        A[t] = (1.0 - eta + cfg.C_1 * eta**2) * A[t - 1] + cfg.C_2 * zeta

    ts = np.arange(1, horizon + 1, dtype=float)
    gap = cfg.b - cfg.a
    C_A = float(
        np.max(A[:t_max] * ts[:t_max] ** gap)
        + cfg.C_2 * cfg.C_zeta / (cfg.C_eta - 1.0 - cfg.b + cfg.a)
    )
    bound = C_A / ts[:T] ** gap
    holds = bool(np.all(A[:T] <= bound * (1.0 + 1e-12) + 1e-300))
    return DecayCertificate(A=A[:T], C_A=C_A, bound=bound, holds=holds)


def _spectral_norms(stack: np.ndarray) -> np.ndarray:
    return np.linalg.norm(stack, ord=2, axis=(1, 2))


def _unbiased_spread(stack: np.ndarray) -> float:
    """Estimate of E||X - EX||^2 from K samples (rows of stack)."""
    K = stack.shape[0]
    if K < 2:
        return 0.0
    dev = stack - stack.mean(axis=0)
    return float(np.sum(dev**2) / (K - 1))


# Enumerated atom stacks above this many entries fall back to sampled means
# for the Lipschitz quotients (memory guard).
_ENUM_BUDGET = 2_000_000


def estimate_constants(
    problem: CompositionalProblem,
    domain_sampler: Callable[[np.random.Generator], np.ndarray],
    N: int,
    rng: Optional[np.random.Generator] = None,
    var_batch: int = 32,
    pair_range: tuple[float, float] = (1e-3, 1.0),
) -> ProblemConstants:
    """Empirical boundedness/smoothness/variance constants over N domain draws.

    Gradient and Jacobian bounds are running maxima of sampled norms;
    smoothness constants are maxima of difference quotients over point pairs
    at distance within ``pair_range`` (per-atom when the problem enumerates
    its atoms cheaply, sampled means otherwise); variances are the largest
    per-point unbiased spreads.  B_f comes from exact_objective when present.
    Requires dense-Jacobian problems.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    B_f = M_f = M_g = L_f = L_g = s1 = s2 = s3 = 0.0

    for _ in range(N):
        x = np.asarray(domain_sampler(rng), dtype=float)
        inner = sample_inner(problem, x, var_batch, rng)
        if inner.jacobians is None:
            raise ValueError("constant estimation needs dense inner Jacobians")
        M_g = max(M_g, float(_spectral_norms(inner.jacobians).max()))
        s3 = max(s3, _unbiased_spread(inner.values))
        s2 = max(s2, _unbiased_spread(inner.jacobians.reshape(var_batch, -1)))

        y = problem.exact_inner(x) if problem.exact_inner else inner.values[0]
        outer = sample_outer(problem, y, var_batch, rng)
        M_f = max(M_f, float(np.linalg.norm(outer, axis=1).max()))
        s1 = max(s1, _unbiased_spread(outer))

        # paired difference quotients; distances kept in pair_range to avoid
        # floating-point cancellation
        delta = rng.uniform(*pair_range)
        u = rng.standard_normal(problem.p)
        x2 = x + delta * (u / np.linalg.norm(u))
        uq = rng.standard_normal(problem.q)
        y2 = y + delta * (uq / np.linalg.norm(uq))

        if (
            problem.enumerate_inner is not None
            and problem.enumerate_outer is not None
        ):
            j1 = problem.enumerate_inner(x).jacobians
            if j1.size <= _ENUM_BUDGET:
                j2 = problem.enumerate_inner(x2).jacobians
                diff = (j1 - j2).reshape(j1.shape[0], -1)
                L_g = max(L_g, float(np.linalg.norm(diff, axis=1).max()) / delta)
            g1 = problem.enumerate_outer(y)
            g2 = problem.enumerate_outer(y2)
            L_f = max(L_f, float(np.linalg.norm(g1 - g2, axis=1).max()) / delta)
        else:
            j1 = sample_inner(problem, x, var_batch, rng).mean_jacobian()
            j2 = sample_inner(problem, x2, var_batch, rng).mean_jacobian()
            L_g = max(L_g, float(np.linalg.norm(j1 - j2)) / delta)
            g1 = sample_outer(problem, y, var_batch, rng).mean(axis=0)
            g2 = sample_outer(problem, y2, var_batch, rng).mean(axis=0)
            L_f = max(L_f, float(np.linalg.norm(g1 - g2)) / delta)

        if problem.exact_objective is not None:
            B_f = max(B_f, abs(float(problem.exact_objective(x))))

    return ProblemConstants(
        B_f=B_f, M_f=M_f, M_g=M_g, L_f=L_f, L_g=L_g,
        sigma1_sq=s1, sigma2_sq=s2, sigma3_sq=s3,
    )


def decay_exponent_fit(
    traces: Union[RunTrace, Sequence[RunTrace]],
    checkpoints: Optional[Sequence[int]] = None,
) -> float:
    """Least-squares slope of log(mean tracking error) against log(t).

    The mean is taken across the given traces (seeds) at shared checkpoints;
    nonpositive means are dropped before the log-log fit.
    """
    if isinstance(traces, RunTrace):
        traces = [traces]
    if not traces:
        raise ValueError("need at least one trace")
    ts = traces[0].t
    if checkpoints is not None:
        ts = np.asarray(sorted(set(int(c) for c in checkpoints)))
    errs = np.empty((len(traces), len(ts)))
    for i, tr in enumerate(traces):
        lookup = dict(zip(tr.t.tolist(), tr.tracking_err.tolist()))
        try:
            errs[i] = [lookup[int(t)] for t in ts]
        except KeyError as exc:
            raise ValueError(f"trace {i} has no row at checkpoint {exc}") from exc
    mean_err = errs.mean(axis=0)
    keep = np.isfinite(mean_err) & (mean_err > 0) & (ts >= 1)
    if keep.sum() < 2:
        raise ValueError("need at least two positive checkpoints for a slope")
    slope, _ = np.polyfit(np.log(ts[keep]), np.log(mean_err[keep]), 1)
    return float(slope)
