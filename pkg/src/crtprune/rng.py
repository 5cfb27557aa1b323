"""Deterministic random-stream derivation.

Replicated experiments draw from independent streams derived from one base
seed.  Stream i uses the 64-bit splitmix finalizer on (seed XOR mix(i)), so
replicate streams can be regenerated in any order or in parallel without
sharing state.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One round of the splitmix64 output mix (public-domain constants)."""
    x = (x + _GOLDEN) & _MASK
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK
    x ^= x >> 31
    return x


def derive_key(seed: int, *indices: int) -> int:
    """Fold integer indices into a 64-bit stream key."""
    h = splitmix64(seed & _MASK)
    for ix in indices:
        h = splitmix64(h ^ ((ix & _MASK) * _GOLDEN & _MASK))
    return h


def stream(seed: int, *indices: int) -> np.random.Generator:
    """Independent generator for (seed, *indices)."""
    return np.random.Generator(np.random.PCG64(derive_key(seed, *indices)))
