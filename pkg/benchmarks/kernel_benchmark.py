"""Compares the compiled kernel extension against the numpy fallback.

Usage: python benchmarks/kernel_benchmark.py [--repeats 200]

Times the three hot kernels (batched forward, batched backward, Adam) at the
shapes the training loop actually uses: single-row acting passes, learner
batches, and the enumeration batch the scheduler critic sees.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from skillsched.backend import available_backends, get_kernels
from skillsched.seeding import make_rng

CASES = [
    ("act fwd 1x(19-64-64-6)", (19, 64, 64, 6), 1),
    ("learner fwd 64x(19-64-64-6)", (19, 64, 64, 6), 64),
    ("enum fwd 3200x(40-64-64-1)", (40, 64, 64, 1), 3200),
]


def time_case(kern, sizes, batch, repeats, rng):
    p = np.ascontiguousarray(rng.normal(size=kern.param_count(sizes)))
    x = np.ascontiguousarray(rng.normal(size=(batch, sizes[0])))
    dy = np.ascontiguousarray(rng.normal(size=(batch, sizes[-1])))
    grad = np.zeros_like(p)
    m, v = np.zeros_like(p), np.zeros_like(p)

    y, acts = kern.mlp_forward(p, sizes, x)
    t0 = time.perf_counter()
    for _ in range(repeats):
        kern.mlp_forward(p, sizes, x)
    fwd = (time.perf_counter() - t0) / repeats

    t0 = time.perf_counter()
    for _ in range(repeats):
        kern.mlp_backward(p, sizes, x, acts, dy, grad)
    bwd = (time.perf_counter() - t0) / repeats

    t0 = time.perf_counter()
    for i in range(repeats):
        kern.adam_step(p, grad, m, v, i + 1, 3e-4, 0.9, 0.999, 1e-8)
    adam = (time.perf_counter() - t0) / repeats
    return fwd, bwd, adam


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()

    backends = available_backends()
    print(f"available backends: {backends}")
    rows = {}
    for name in backends:
        kern = get_kernels(name)
        rng = make_rng(0)
        for label, sizes, batch in CASES:
            rows.setdefault(label, {})[name] = time_case(
                kern, sizes, batch, args.repeats, rng)

    hdr = f"{'case':<34}{'kernel':>10}"
    for name in backends:
        hdr += f"{name:>14}"
    if len(backends) == 2:
        hdr += f"{'speedup':>10}"
    print(hdr)
    for label, per in rows.items():
        for j, op in enumerate(("forward", "backward", "adam")):
            line = f"{label if j == 0 else '':<34}{op:>10}"
            for name in backends:
                line += f"{per[name][j] * 1e6:>12.1f}us"
            if len(backends) == 2:
                line += f"{per['numpy'][j] / per['compiled'][j]:>9.2f}x"
            print(line)


if __name__ == "__main__":
    main()
