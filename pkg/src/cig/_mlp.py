"""Stacked multilayer perceptrons with hand-written backprop.

Parameters of ``M`` independent networks of identical shape are stored as
stacked arrays (``W: (M, n_in, n_out)``, ``b: (M, n_out)``) so a forward or
backward pass over all members is a handful of batched matmuls.
"""

from __future__ import annotations

import numpy as np


def silu(z):
    # exp overflow for very negative z gives z / inf = -0, the correct limit
    with np.errstate(over="ignore"):
        return z / (1.0 + np.exp(-z))


def silu_grad(z):
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


def init_params(sizes, seeds, scale=1.0):
    """Glorot-uniform weights and zero biases, one generator per member."""
    n_members = len(seeds)
    params = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        params.append(np.empty((n_members, n_in, n_out)))
        params.append(np.zeros((n_members, n_out)))
    for k, seed in enumerate(seeds):
        rng = np.random.default_rng(int(seed))
        for layer, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = scale * np.sqrt(6.0 / (n_in + n_out))
            params[2 * layer][k] = rng.uniform(-limit, limit, size=(n_in, n_out))
    return params


def forward(params, X, keep=False):
    """Evaluate every member on ``X``.

    ``X`` is ``(n, n_in)`` (shared by all members) or ``(M, n, n_in)``.
    Returns ``(M, n, n_out)``; with ``keep=True`` also the layer cache.
    """
    h = X
    cache = []
    n_layers = len(params) // 2
    for layer in range(n_layers):
        W, b = params[2 * layer], params[2 * layer + 1]
        z = np.matmul(h, W) + b[:, None, :]
        if keep:
            cache.append((h, z))
        h = silu(z) if layer < n_layers - 1 else z
    return (h, cache) if keep else h


def backward(params, cache, grad_out):
    """Gradients of ``sum(grad_out * output)`` with respect to every parameter."""
    grads = [None] * len(params)
    delta = grad_out
    n_layers = len(params) // 2
    for layer in reversed(range(n_layers)):
        h, z = cache[layer]
        if layer < n_layers - 1:
            delta = delta * silu_grad(z)
        W = params[2 * layer]
        if h.ndim == 2:
            grads[2 * layer] = np.matmul(h.T, delta)
        else:
            grads[2 * layer] = np.matmul(np.swapaxes(h, -1, -2), delta)
        grads[2 * layer + 1] = delta.sum(axis=1)
        if layer > 0:
            delta = np.matmul(delta, np.swapaxes(W, -1, -2))
    return grads


def mse_loss_and_grads(params, X, y, offset=None):
    """Per-member mean squared error over ``(n, d)`` and its gradients.

    ``offset`` (``(n, d)``) is added to every member's output before the
    loss; it carries residual (``s + f(s, a)``) parametrizations.
    """
    out, cache = forward(params, X, keep=True)
    if offset is not None:
        out = out + offset
    err = out - y
    n, d = y.shape[-2:]
    losses = (err**2).mean(axis=(-2, -1))
    grads = backward(params, cache, 2.0 * err / (n * d))
    return losses, grads


class Optimizer:
    """SGD with momentum or Adam over a list of stacked parameter arrays."""

    def __init__(self, kind="sgd", momentum=0.9, beta2=0.999, eps=1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {kind!r}")
        self.kind = kind
        self.momentum = momentum
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._m = None
        self._v = None

    def step(self, params, grads, lr):
        if lr == 0:
            return
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params] if self.kind == "adam" else None
        self.steps += 1
        if self.kind == "sgd":
            for p, g, m in zip(params, grads, self._m):
                m *= self.momentum
                m += g
                p -= lr * m
            return
        b1, b2 = self.momentum, self.beta2
        c1 = 1.0 - b1**self.steps
        c2 = 1.0 - b2**self.steps
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
