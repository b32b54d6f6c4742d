"""Concrete nested problems: portfolio mean-variance, a noisy linear-quadratic
composition with known optimum, and the identity-composition wrapper.

The portfolio problem minimizes return variance minus mean return over m
reward vectors.  With inner atoms g_j(x) = [x; -r_j^T x] and outer atoms
f_i(y) = ([r_i^T, 1] y)^2 - [r_i^T, 0] y it is a finite-sum instance of the
nested form, with p = n assets and q = n + 1.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import CompositionalProblem, InnerBatch

REGIMES = {"large": (13781, 100), "medium": (7240, 25)}


def _hash_arrays(tag: str, *arrays) -> str:
    digest = hashlib.sha256(tag.encode())
    for a in arrays:
        digest.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return digest.hexdigest()


@dataclass(frozen=True)
class PortfolioData:
    """Reward vectors per time point: R has one row per time point, one
    column per asset."""

    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        if self.R.ndim != 2:
            raise ValueError("returns must be a 2-D matrix (time points x assets)")
        m, n = self.R.shape
        if m < 2 or n < 1:
            raise ValueError(f"need at least 2 time points and 1 asset, got {m}x{n}")
        if not np.isfinite(self.R).all():
            raise ValueError("returns contain non-finite entries")

    @property
    def m(self) -> int:
        return self.R.shape[0]

    @property
    def n(self) -> int:
        return self.R.shape[1]

    def content_hash(self) -> str:
        return _hash_arrays("portfolio", self.R)


def synthetic_returns(
    m: Optional[int] = None,
    n: Optional[int] = None,
    seed: int = 0,
    regime: Optional[str] = None,
    mean_range: tuple[float, float] = (0.5, 1.5),
    vol_range: tuple[float, float] = (2.0, 6.0),
    asset_means: Optional[np.ndarray] = None,
    asset_vols: Optional[np.ndarray] = None,
) -> PortfolioData:
    """Gaussian per-asset returns with configurable drift and volatility.

    ``regime`` picks dataset shapes matching the benchmark families:
    'large' = 13781 x 100, 'medium' = 7240 x 25.  Explicit m/n override the
    regime.  Scales default to percent-like monthly returns.
    """
    if regime is not None:
        if regime not in REGIMES:
            raise ValueError(f"unknown regime {regime!r}; choose from {sorted(REGIMES)}")
        rm, rn = REGIMES[regime]
        m = rm if m is None else m
        n = rn if n is None else n
    if m is None or n is None:
        raise ValueError("either a regime or explicit m and n are required")
    rng = np.random.default_rng(seed)
    means = (
        rng.uniform(*mean_range, size=n) if asset_means is None
        else np.asarray(asset_means, dtype=float)
    )
    vols = (
        rng.uniform(*vol_range, size=n) if asset_vols is None
        else np.asarray(asset_vols, dtype=float)
    )
    if means.shape != (n,) or vols.shape != (n,):
        raise ValueError("asset_means/asset_vols must have shape (n,)")
    R = means + vols * rng.standard_normal((m, n))
    return PortfolioData(R)


def _portfolio_inner_at(R: np.ndarray, z: np.ndarray, idx: np.ndarray,
                        need_jacobian: bool) -> InnerBatch:
    K = len(idx)
    m, n = R.shape
    rows = R[idx]
    values = np.empty((K, n + 1))
    values[:, :n] = z
    values[:, n] = -rows @ z
    jac = None
    if need_jacobian:
        jac = np.zeros((K, n + 1, n))
        jac[:, :n, :] = np.eye(n)
        jac[:, n, :] = -rows
    return InnerBatch(values=values, jacobians=jac)


def _portfolio_outer_at(R: np.ndarray, y: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # grad f_i(y) = 2([r_i^T, 1] y) [r_i; 1] - [r_i; 0]
    m, n = R.shape
    rows = R[idx]
    proj = rows @ y[:n] + y[n]
    grads = np.empty((len(idx), n + 1))
    grads[:, :n] = (2.0 * proj - 1.0)[:, None] * rows
    grads[:, n] = 2.0 * proj
    return grads


def portfolio_problem(data: PortfolioData) -> CompositionalProblem:
    """Mean-variance objective as a finite-sum nested problem.

    Inner and outer indices are sampled independently and uniformly with
    replacement, so the product-expectation structure of the composite
    gradient holds exactly.
    """
    R = data.R
    m, n = R.shape
    r_bar = R.mean(axis=0)

    def inner(z, K, rng, need_jacobian=True):
        idx = rng.integers(0, m, size=K)
        return _portfolio_inner_at(R, z, idx, need_jacobian)

    def outer(y, K, rng):
        idx = rng.integers(0, m, size=K)
        return _portfolio_outer_at(R, y, idx)

    def enumerate_inner(z):
        return _portfolio_inner_at(R, z, np.arange(m), True)

    def enumerate_outer(y):
        return _portfolio_outer_at(R, y, np.arange(m))

    def exact_inner(x):
        return np.concatenate([x, [-r_bar @ x]])

    def exact_objective(x):
        s = R @ x
        mean = s.mean()
        return float(np.mean((s - mean) ** 2) - mean)

    def exact_gradient(x):
        s = R @ x
        mean = s.mean()
        return (2.0 / m) * ((s - mean) @ (R - r_bar)) - r_bar

    return CompositionalProblem(
        p=n,
        q=n + 1,
        inner=inner,
        outer=outer,
        exact_inner=exact_inner,
        exact_objective=exact_objective,
        exact_gradient=exact_gradient,
        enumerate_inner=enumerate_inner,
        enumerate_outer=enumerate_outer,
        content_hash=data.content_hash(),
    )


def portfolio_objective_compositional(data: PortfolioData, x: np.ndarray) -> float:
    """Objective evaluated strictly by the nested route: average the inner
    atoms into y-bar, then average the outer atom values at y-bar.

    Kept independent of the direct variance-minus-mean formula so the two
    evaluation routes can be compared.
    """
    R = data.R
    m, n = R.shape
    x = np.asarray(x, dtype=float)
    y_bar = np.concatenate([x, [-(R @ x).mean()]])
    proj = R @ y_bar[:n] + y_bar[n]          # [r_i^T, 1] y-bar, per atom i
    drift = R @ y_bar[:n]                    # [r_i^T, 0] y-bar
    return float(np.mean(proj**2 - drift))


@dataclass(frozen=True)
class QuadCompose:
    """Linear inner map with quadratic outer loss and additive oracle noise.

    g(x) = Ax + b observed with zero-mean Gaussian noise (scale sigma_g on
    values, sigma_J on Jacobian entries); the outer gradient y is observed
    with noise scale sigma_f.  The noiseless objective 0.5 ||Ax + b||^2 has a
    closed-form minimizer whenever A has full column rank.
    """

    A: np.ndarray
    b: np.ndarray
    noise_scales: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        if self.A.ndim != 2 or self.b.shape != (self.A.shape[0],):
            raise ValueError("A must be (q, p) and b must be (q,)")
        if not (np.isfinite(self.A).all() and np.isfinite(self.b).all()):
            raise ValueError("A and b must be finite")
        if len(self.noise_scales) != 3 or any(
            not np.isfinite(s) or s < 0 for s in self.noise_scales
        ):
            raise ValueError("noise_scales must be three finite nonnegative reals")

    @property
    def p(self) -> int:
        return self.A.shape[1]

    @property
    def q(self) -> int:
        return self.A.shape[0]

    def minimizer(self) -> np.ndarray:
        x_star, *_ = np.linalg.lstsq(self.A, -self.b, rcond=None)
        return x_star

    def oracle_variances(self) -> tuple[float, float, float]:
        """Per-sample oracle variances (sigma1^2, sigma2^2, sigma3^2) implied
        by the noise scales: outer gradient, inner Jacobian (Frobenius),
        inner value."""
        sg, sj, sf = self.noise_scales
        return (self.q * sf**2, self.q * self.p * sj**2, self.q * sg**2)

    def content_hash(self) -> str:
        return _hash_arrays("quad", self.A, self.b, np.asarray(self.noise_scales))


def quad_compose_problem(qc: QuadCompose) -> CompositionalProblem:
    """Noisy oracles around f(y) = 0.5 ||y||^2 over g(x) = Ax + b."""
    A, b = qc.A, qc.b
    q, p = A.shape
    sigma_g, sigma_J, sigma_f = qc.noise_scales

    def inner(z, K, rng, need_jacobian=True):
        base = A @ z + b
        if sigma_g > 0:
            values = sigma_g * rng.standard_normal((K, q))
            values += base
        else:
            values = np.tile(base, (K, 1))
        jac = None
        if need_jacobian:
            if sigma_J > 0:
                jac = sigma_J * rng.standard_normal((K, q, p))
                jac += A
            else:
                jac = np.tile(A, (K, 1, 1))
        return InnerBatch(values=values, jacobians=jac)

    def outer(y, K, rng):
        if sigma_f > 0:
            grads = sigma_f * rng.standard_normal((K, q))
            grads += y
            return grads
        return np.tile(y, (K, 1))

    def exact_inner(x):
        return A @ x + b

    def exact_objective(x):
        r = A @ x + b
        return float(0.5 * r @ r)

    def exact_gradient(x):
        return A.T @ (A @ x + b)

    return CompositionalProblem(
        p=p,
        q=q,
        inner=inner,
        outer=outer,
        exact_inner=exact_inner,
        exact_objective=exact_objective,
        exact_gradient=exact_gradient,
        content_hash=qc.content_hash(),
    )


def random_quad(
    p: int,
    q: int,
    seed: int = 0,
    noise: tuple[float, float, float] = (0.1, 0.1, 0.1),
    singular_values: tuple[float, float] = (0.5, 1.5),
) -> QuadCompose:
    """Well-conditioned random instance: singular values of A drawn in the
    given range, b standard normal."""
    if q < p:
        raise ValueError("need q >= p for a full-column-rank instance")
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.standard_normal((q, p)))
    V, _ = np.linalg.qr(rng.standard_normal((p, p)))
    s = rng.uniform(*singular_values, size=p)
    A = U @ np.diag(s) @ V.T
    b = rng.standard_normal(q)
    return QuadCompose(A=A, b=b, noise_scales=noise)


def identity_problem(
    outer: Callable[[np.ndarray, int, np.random.Generator], np.ndarray],
    p: int,
) -> CompositionalProblem:
    """Deterministic identity inner map (q = p) around a supplied f-oracle.

    Collapses the nested problem to plain stochastic minimization of f, which
    is what makes the reduction to the standard adaptive-moment method exact.
    """

    def inner(z, K, rng, need_jacobian=True):
        values = np.tile(z, (K, 1))
        jac = np.tile(np.eye(p), (K, 1, 1)) if need_jacobian else None
        return InnerBatch(values=values, jacobians=jac)

    return CompositionalProblem(
        p=p,
        q=p,
        inner=inner,
        outer=outer,
        exact_inner=lambda x: np.asarray(x, dtype=float).copy(),
    )
