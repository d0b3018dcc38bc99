"""Deterministic random streams.

All randomness in this package flows through Philox4x64-10 counter-based
generators (as shipped with NumPy), keyed by an integer seed.  The stream is
fully determined by (seed, draw sizes) and is identical across platforms, so
noisy experiments are reproducible bit for bit.
"""

import numpy as np


def generator(seed):
    """A counter-based generator for the given integer seed."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def uniform(seed, n):
    """n uniform draws on [0, 1), deterministic in (seed, n)."""
    return generator(seed).random(n)


def standard_normal(seed, n):
    return generator(seed).standard_normal(n)


def unit_vector(seed, n):
    """A deterministic unit vector in R^n (Euclidean norm 1)."""
    v = standard_normal(seed, n)
    nrm = np.linalg.norm(v)
    if nrm == 0.0:  # cannot happen for Philox output, defensive only
        v[0] = 1.0
        return v
    return v / nrm
