"""Dense MLPs with reverse-mode gradients, Adam, and a finite-difference
gradient checker.

Everything runs in float64 on flat parameter vectors so that checkpointing,
Adam and gradient accumulation are single-array operations. Hidden layers
are tanh, the output layer is linear. The hot loops live in the kernel
backend (compiled extension or numpy fallback).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .errors import ConfigurationError, NumericalAbort

CHECKPOINT_FORMAT_VERSION = 1


class Mlp:
    """Feed-forward net over a flat float64 parameter vector.

    Layer l maps sizes[l] -> sizes[l+1] with weights (n_out, n_in) row-major
    followed by the bias block, concatenated over layers.
    """

    def __init__(self, sizes, params: np.ndarray):
        sizes = tuple(int(n) for n in sizes)
        if len(sizes) < 2 or any(n <= 0 for n in sizes):
            raise ConfigurationError(f"bad layer sizes {sizes}")
        expected = kernels.param_count(sizes)
        if params.shape != (expected,):
            raise ConfigurationError(
                f"params length {params.shape} != {expected} for sizes {sizes}")
        if not np.all(np.isfinite(params)):
            raise ConfigurationError("non-finite parameters")
        self.sizes = sizes
        self.params = np.ascontiguousarray(params, dtype=np.float64)

    @classmethod
    def create(cls, sizes, rng: np.random.Generator, zero_final: bool = False) -> "Mlp":
        """Glorot-uniform weights, zero biases; optionally zero the last layer
        (used by policy/critic heads that must start state-independent)."""
        sizes = tuple(int(n) for n in sizes)
        parts = []
        n_layers = len(sizes) - 1
        for l in range(n_layers):
            n_in, n_out = sizes[l], sizes[l + 1]
            if zero_final and l == n_layers - 1:
                parts.append(np.zeros(n_in * n_out))
            else:
                bound = math.sqrt(6.0 / (n_in + n_out))
                parts.append(rng.uniform(-bound, bound, size=n_in * n_out))
            parts.append(np.zeros(n_out))
        return cls(sizes, np.concatenate(parts))

    @property
    def n_params(self) -> int:
        return self.params.shape[0]

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def layer_slices(self):
        """(weight_slice, bias_slice) per layer into the flat vector."""
        out, off = [], 0
        for l in range(len(self.sizes) - 1):
            n_in, n_out = self.sizes[l], self.sizes[l + 1]
            w = slice(off, off + n_in * n_out)
            off += n_in * n_out
            b = slice(off, off + n_out)
            off += n_out
            out.append((w, b))
        return out

    def forward_batch(self, x: np.ndarray):
        """Returns (y, cache); pass cache to backward_batch."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ConfigurationError(
                f"input shape {x.shape} incompatible with first layer {self.sizes[0]}")
        y, acts = kernels.mlp_forward(self.params, self.sizes, x)
        return y, (x, acts)

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_batch(np.asarray(x, dtype=np.float64)[None, :])
        return y[0]

    def backward_batch(self, cache, dy: np.ndarray, tape: "GradTape") -> np.ndarray:
        """Accumulates dloss/dparams into tape; returns dloss/dinput."""
        x, acts = cache
        dy = np.ascontiguousarray(dy, dtype=np.float64)
        if dy.shape != (x.shape[0], self.sizes[-1]):
            raise ConfigurationError(
                f"output grad shape {dy.shape} incompatible with {self.sizes}")
        tape.check(self)
        return kernels.mlp_backward(self.params, self.sizes, x, acts, dy, tape.grad)

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, self.params.copy())

    def load_params(self, params: np.ndarray) -> None:
        if params.shape != self.params.shape:
            raise ConfigurationError("parameter shape mismatch")
        self.params[:] = params


class GradTape:
    """Per-parameter gradient accumulator aligned with one Mlp."""

    def __init__(self, net: Mlp):
        self.sizes = net.sizes
        self.grad = np.zeros(net.n_params)

    def zero(self) -> None:
        self.grad[:] = 0.0

    def check(self, net: Mlp) -> None:
        if net.sizes != self.sizes or net.n_params != self.grad.shape[0]:
            raise ConfigurationError("tape not congruent with net")


@dataclass
class AdamState:
    """First/second moment state for one flat parameter vector."""

    lr: float
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: Mlp, lr: float, **kw) -> "AdamState":
        return cls(lr=lr, m=np.zeros(net.n_params), v=np.zeros(net.n_params), **kw)


def adam_step(params: np.ndarray, tape: GradTape, state: AdamState) -> np.ndarray:
    """Standard bias-corrected Adam; updates params in place and returns them."""
    if params.shape != state.m.shape or params.shape != tape.grad.shape:
        raise ConfigurationError("adam state not congruent with params")
    state.step += 1
    kernels.adam_step(params, tape.grad, state.m, state.v, state.step,
                      state.lr, state.beta1, state.beta2, state.eps)
    return params


def grad_check(loss_fn, params: np.ndarray, tolerance: float = 1e-4,
               h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_fn(params) -> (loss, grad). The returned error uses
    |a - n| / max(1e-8, |a| + |n|) per coordinate; callers compare against
    `tolerance` (also used by the CLI for its exit status).
    """
    params = np.asarray(params, dtype=np.float64)
    loss, grad = loss_fn(params)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericalAbort("non-finite loss or gradient at check point")
    worst = 0.0
    p = params.copy()
    for i in range(p.shape[0]):
        orig = p[i]
        p[i] = orig + h
        up, _ = loss_fn(p)
        p[i] = orig - h
        dn, _ = loss_fn(p)
        p[i] = orig
        if not (np.isfinite(up) and np.isfinite(dn)):
            raise NumericalAbort("non-finite loss during finite differences")
        numeric = (up - dn) / (2.0 * h)
        a = grad[i]
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    return worst


# -- checkpoint format -------------------------------------------------------
#
# A checkpoint is a JSON document: {"format_version": 1, "sizes": [...],
# "params": [...]} plus whatever tags the policy layer adds. json round-trips
# Python floats through repr (shortest form, <= 17 significant digits), so
# load(save(net)) is bit-exact.

def mlp_to_doc(net: Mlp) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "sizes": list(net.sizes),
        "params": net.params.tolist(),
    }


def mlp_from_doc(doc: dict) -> Mlp:
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigurationError(
            f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    return Mlp(doc["sizes"], np.asarray(doc["params"], dtype=np.float64))


def write_json(path: str, doc: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(doc, f)
        f.write("\n")


def read_json(path: str) -> dict:
    with open(path) as f:
        return json.load(f)
