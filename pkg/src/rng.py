"""
Seeded random streams.

Every random draw in the package goes through numpy's PCG64 bit generator.
Child streams are derived with SeedSequence spawn keys, so stream (seed, k, i)
is fixed by its key alone and does not depend on how many other streams were
drawn before it.
"""
from __future__ import annotations

import numpy as np


def child_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the child stream of `seed` addressed by `key`."""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(sequence))


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit integer seed for the child stream addressed by `key`."""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
