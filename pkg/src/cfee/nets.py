# Minimal fully connected networks with explicit reverse-mode gradients,
# first-order optimizers, and a finite-difference gradient checker.
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np


@dataclass
class MlpParams:
    """Dense network parameters: linear layers with ReLU hidden units."""

    weights: List[np.ndarray]  # weights[i] has shape (out_i, in_i)
    biases: List[np.ndarray]
    sizes: Tuple[int, ...]     # (input, hidden..., output)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.sizes)

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def load_flat(self, vec: np.ndarray):
        pos = 0
        for a in self.arrays():
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size


def init_mlp(sizes: Sequence[int], rng: np.random.Generator,
             final_scale: float = 1.0) -> MlpParams:
    """He-initialized MLP; `final_scale` shrinks the output layer (useful
    for policy heads that should start near the middle of the action box)."""
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        scale = np.sqrt(2.0 / n_in)
        if i == len(sizes) - 2:
            scale *= final_scale
        weights.append(rng.normal(0.0, scale, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpParams(weights, biases, tuple(sizes))


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Forward pass; accepts (in,) or (batch, in)."""
    y, _ = forward_cache(params, x)
    return y


def forward_cache(params: MlpParams, x: np.ndarray):
    """Forward pass keeping the activations needed for backward()."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != params.sizes[0]:
        raise ValueError(f"input dim {h.shape[1]} != {params.sizes[0]}")
    acts = [h]
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    y = acts[-1][0] if squeeze else acts[-1]
    return y, (acts, squeeze)


def backward(params: MlpParams, cache, grad_out: np.ndarray):
    """Backpropagate d(loss)/d(output) through the cached forward pass.

    Returns (weight grads, bias grads, d(loss)/d(input)).
    """
    acts, squeeze = cache
    g = np.asarray(grad_out, dtype=float)
    if squeeze:
        g = g[None, :]
    gw = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        if i < len(params.weights) - 1:
            g = g * (acts[i + 1] > 0)  # ReLU gate
        gw[i] = g.T @ acts[i]
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i]
    return gw, gb, (g[0] if squeeze else g)


class Adam:
    """Per-array Adam over a list of parameter arrays."""

    def __init__(self, arrays: List[np.ndarray], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.arrays = arrays
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, grads: List[np.ndarray]):
        """Descend along `grads` (negate the gradient to ascend)."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for a, g, m, v in zip(self.arrays, grads, self.m, self.v):
            m += (1 - b1) * (g - m)
            v += (1 - b2) * (g * g - v)
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            a -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class Sgd:
    """Plain gradient descent, selectable for ablation."""

    def __init__(self, arrays: List[np.ndarray], lr: float = 3e-4):
        self.arrays = arrays
        self.lr = lr

    def step(self, grads: List[np.ndarray]):
        for a, g in zip(self.arrays, grads):
            a -= self.lr * g


def make_optimizer(kind: str, arrays: List[np.ndarray], lr: float):
    if kind == "adam":
        return Adam(arrays, lr=lr)
    if kind == "sgd":
        return Sgd(arrays, lr=lr)
    raise ValueError(f"unknown optimizer '{kind}'")


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_index: int
    ok: bool


def grad_check(params: MlpParams, rng: np.random.Generator,
               tol: float = 1e-4, h: float = 1e-5,
               batch: int = 4) -> GradCheckResult:
    """Compare backward() against central finite differences.

    Uses a squared-error loss on random inputs/targets. The loss is not
    differentiable where a hidden pre-activation sits on the ReLU kink
    (e.g. a dead layer feeding zero-initialized biases puts the next
    pre-activation at exactly 0), so inputs and parameters are jittered
    until every pre-activation clears the kink by more than the FD step.
    """
    params = params.copy()
    target = rng.normal(0.0, 1.0, size=(batch, params.sizes[-1]))

    def min_kink_distance(x: np.ndarray) -> float:
        a, dist = x, np.inf
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            z = a @ w.T + b
            if i == len(params.weights) - 1:
                break
            dist = min(dist, float(np.abs(z).min()))
            a = np.maximum(z, 0.0)
        return dist

    for _ in range(50):
        x = rng.normal(0.0, 1.0, size=(batch, params.sizes[0]))
        if min_kink_distance(x) > 100 * h:
            break
        params.load_flat(params.flatten() +
                         rng.normal(0.0, 0.01, size=params.n_params()))

    def loss_at(flat: np.ndarray) -> float:
        p = params.copy()
        p.load_flat(flat)
        y = forward(p, x)
        return 0.5 * float(((y - target) ** 2).sum())

    y, cache = forward_cache(params, x)
    gw, gb, _ = backward(params, cache, y - target)
    analytic = np.concatenate(
        [g.ravel() for pair in zip(gw, gb) for g in pair])

    flat0 = params.flatten()
    numeric = np.empty_like(flat0)
    for i in range(flat0.size):
        up, dn = flat0.copy(), flat0.copy()
        up[i] += h
        dn[i] -= h
        numeric[i] = (loss_at(up) - loss_at(dn)) / (2 * h)

    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel))
    return GradCheckResult(max_rel_err=float(rel[worst]), worst_index=worst,
                           ok=bool(rel[worst] <= tol))
