"""Minimal dense network with manual forward/backward and Hessian-vector
products, written against flat parameter vectors so optimizers can treat the
network as a point in R^p.

Hidden layers use ReLU by default (tanh available for curvature-sensitive
checks, since ReLU's second derivative is zero almost everywhere); the output
layer is always linear.  The training loss is the summed squared error over a
batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

_ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(float)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
}


@dataclass
class Mlp:
    """Dense feedforward network: weight matrices (out, in), bias vectors."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix")
        for W, b in zip(self.weights, self.biases):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError("weight/bias shapes are inconsistent")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(W.shape[0] for W in self.weights)

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def to_vector(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_vector(self, vec: np.ndarray) -> "Mlp":
        """New network of the same architecture with parameters taken from vec."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise ValueError(f"parameter vector has shape {vec.shape}, expected ({self.n_params},)")
        weights, biases = [], []
        k = 0
        for W, b in zip(self.weights, self.biases):
            weights.append(vec[k:k + W.size].reshape(W.shape).copy())
            k += W.size
            biases.append(vec[k:k + b.size].copy())
            k += b.size
        return Mlp(weights=weights, biases=biases, activation=self.activation)

    def _forward_full(self, inputs: np.ndarray):
        """All pre-activations and activations, for reuse by backprop."""
        a = np.atleast_2d(np.asarray(inputs, dtype=float))
        if a.shape[0] == 1 and a.shape[1] != self.sizes[0]:
            a = a.T
        act, _ = _ACTIVATIONS[self.activation]
        pre, post = [], [a]
        last = len(self.weights) - 1
        for layer, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = post[-1] @ W.T + b
            pre.append(z)
            post.append(act(z) if layer < last else z)
        return pre, post

    def forward(self, inputs: np.ndarray) -> np.ndarray:
        """Batch forward pass; accepts (M,) inputs for 1-D feature spaces."""
        return self._forward_full(inputs)[1][-1]


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    activation: str = "relu",
) -> Mlp:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return Mlp(weights=weights, biases=biases, activation=activation)


def _as_targets(targets: np.ndarray, out_dim: int, M: int) -> np.ndarray:
    y = np.asarray(targets, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape != (M, out_dim):
        raise ValueError(f"targets have shape {y.shape}, expected ({M}, {out_dim})")
    return y


def mlp_loss_grad(net: Mlp, batch) -> tuple[float, np.ndarray]:
    """Summed squared error over the batch and its gradient, by reverse-mode
    accumulation through the layers."""
    pre, post = net._forward_full(batch.inputs)
    out = post[-1]
    y = _as_targets(batch.targets, out.shape[1], out.shape[0])
    resid = out - y
    loss = float(np.sum(resid**2))

    _, act_prime = _ACTIVATIONS[net.activation]
    delta = 2.0 * resid
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    for layer in range(len(net.weights) - 1, -1, -1):
        grads_w[layer] = delta.T @ post[layer]
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ net.weights[layer]) * act_prime(pre[layer - 1])

    parts = []
    for gW, gb in zip(grads_w, grads_b):
        parts.append(gW.ravel())
        parts.append(gb)
    return loss, np.concatenate(parts)


def mlp_mse(net: Mlp, batch) -> float:
    """Mean squared error over the batch (evaluation metric)."""
    out = net.forward(batch.inputs)
    y = _as_targets(batch.targets, out.shape[1], out.shape[0])
    return float(np.mean((out - y) ** 2))


def hvp(net: Mlp, batch, direction: np.ndarray) -> np.ndarray:
    """Loss-Hessian action on a direction, by central differences of the
    gradient:

        (grad(x + h u) - grad(x - h u)) / (2 h),
        h = sqrt(machine eps) * (1 + ||x||) / max(||u||, tiny).
    """
    u = np.asarray(direction, dtype=float)
    x = net.to_vector()
    h = np.sqrt(np.finfo(float).eps) * (1.0 + np.linalg.norm(x)) / max(
        np.linalg.norm(u), np.finfo(float).tiny
    )
    _, g_plus = mlp_loss_grad(net.with_vector(x + h * u), batch)
    _, g_minus = mlp_loss_grad(net.with_vector(x - h * u), batch)
    return (g_plus - g_minus) / (2.0 * h)
