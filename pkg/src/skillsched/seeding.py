"""Deterministic RNG plumbing.

One 64-bit seed at the root of every run; everything downstream draws from
explicitly passed generators produced by splitting that root. No global RNG
anywhere in the package.
"""

from __future__ import annotations

import numpy as np


def root_sequence(seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed))


def split(seq: np.random.SeedSequence, n: int) -> list[np.random.SeedSequence]:
    return seq.spawn(n)


def make_rng(seq: np.random.SeedSequence | int) -> np.random.Generator:
    if isinstance(seq, (int, np.integer)):
        seq = np.random.SeedSequence(int(seq))
    return np.random.Generator(np.random.PCG64(seq))
