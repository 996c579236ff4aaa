"""Deterministic RNG streams derived from integer key tuples.

Every random draw in the package comes from a generator built here, keyed by
(run seed, step, item index, ...) so that batch-parallel work is reproducible
regardless of scheduling.
"""

import numpy as np


def make_rng(*keys: int) -> np.random.Generator:
    """A fresh PCG64 generator for the given integer key tuple."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(keys))))
