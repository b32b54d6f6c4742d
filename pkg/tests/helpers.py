"""Shared independent oracles for the test suite.

These stay deliberately separate from the library code: central finite
differences here check gradients produced by backprop/chain rule there.
"""

import numpy as np


def fd_gradient(f, x, h=1e-5):
    """Central-difference gradient of a scalar function, one coordinate at a
    time."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return out


def fd_hessian_from_grad(grad_fn, x, h=1e-6):
    """Explicit Hessian: finite-difference the gradient column by column."""
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        H[:, i] = (grad_fn(x + e) - grad_fn(x - e)) / (2.0 * h)
    return H


def rel_err(approx, exact):
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    denom = max(np.linalg.norm(exact.ravel()), 1e-300)
    return float(np.linalg.norm((approx - exact).ravel()) / denom)
