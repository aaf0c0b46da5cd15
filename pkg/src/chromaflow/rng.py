"""Deterministic seed derivation.

All randomness in the package flows through numpy Generators created from
explicit u64 seeds. Sub-streams (per sample, per training step, per branch)
are derived with a splitmix64 hash of (seed, *indices) so that results are
reproducible and independent of evaluation order.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return (x ^ (x >> 31)) & _MASK


def derive_seed(seed: int, *indices: int) -> int:
    """Mix a base seed with one or more stream indices into a new u64 seed."""
    h = _splitmix64(seed & _MASK)
    for idx in indices:
        h = _splitmix64(h ^ (idx & _MASK))
    return h


def make_rng(seed: int, *indices: int) -> np.random.Generator:
    """Generator for the sub-stream identified by (seed, *indices)."""
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *indices)))
