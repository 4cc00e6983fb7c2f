"""Numpy implementations of the hot kernels.

Same contracts as the compiled module skillsched._kernels; backend.py picks
whichever is importable. Parameter layout per layer l (sizes n_l -> n_{l+1}):
weight block of shape (n_{l+1}, n_l) row-major, then bias block (n_{l+1},).
Hidden activations are tanh, the output layer is linear.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def param_count(sizes) -> int:
    return int(sum((sizes[l] + 1) * sizes[l + 1] for l in range(len(sizes) - 1)))


def _layer_views(params: np.ndarray, sizes):
    """Yield (W, b) views into the flat parameter vector."""
    off = 0
    for l in range(len(sizes) - 1):
        n_in, n_out = sizes[l], sizes[l + 1]
        w = params[off : off + n_in * n_out].reshape(n_out, n_in)
        off += n_in * n_out
        b = params[off : off + n_out]
        off += n_out
        yield w, b


def mlp_forward(params: np.ndarray, sizes, x: np.ndarray):
    """Batched forward pass.

    x: (B, n_0). Returns (y, acts) where y is (B, n_L) and acts holds the
    post-tanh hidden activations needed by mlp_backward.
    """
    acts = []
    h = x
    layers = list(_layer_views(params, sizes))
    for l, (w, b) in enumerate(layers):
        z = h @ w.T + b
        if l < len(layers) - 1:
            h = np.tanh(z)
            acts.append(h)
        else:
            h = z
    return h, acts


def mlp_backward(params: np.ndarray, sizes, x: np.ndarray, acts, dy: np.ndarray,
                 grad: np.ndarray):
    """Accumulate parameter gradients into `grad`; return dloss/dx.

    dy: (B, n_L) upstream gradient. grad must be shape-congruent with params.
    """
    layers = list(_layer_views(params, sizes))
    inputs = [x] + acts  # input seen by each layer
    delta = dy           # dloss/dz of the current layer
    off = len(params)
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        n_in, n_out = sizes[l], sizes[l + 1]
        a = inputs[l]
        off -= n_out
        grad[off : off + n_out] += delta.sum(axis=0)
        off -= n_in * n_out
        grad[off : off + n_in * n_out] += (delta.T @ a).ravel()
        d_in = delta @ w
        if l == 0:
            return d_in
        delta = d_in * (1.0 - a * a)
    raise ValueError("net must have at least one layer")


def adam_step(params: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              step: int, lr: float, beta1: float, beta2: float, eps: float) -> None:
    """In-place Adam update; `step` is the post-increment step count (>= 1)."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    params -= lr * mhat / (np.sqrt(vhat) + eps)
