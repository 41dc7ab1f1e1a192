"""Seed derivation shared by the noise generators and the ensemble runner.

Sub-seeds come from the SplitMix64 finalizer applied to
``seed + (index + 1) * 0x9E3779B97F4A7C15 (mod 2**64)``. Every random draw in
the toolkit goes through :func:`rng`, i.e. numpy's PCG64.
"""

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(z):
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix(seed, index):
    """Derive an independent 64-bit sub-seed for stream ``index`` of ``seed``."""
    return splitmix64((int(seed) + (int(index) + 1) * _GOLDEN) & _MASK)


def rng(seed):
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK))
