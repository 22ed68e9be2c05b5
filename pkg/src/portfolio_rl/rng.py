"""Seeded random streams.

Every stream is a Philox counter-based generator keyed by a tuple of
integers, so a stream can be rebuilt on any worker from its key alone.
"""

import numpy as np


def make_rng(*keys: int) -> np.random.Generator:
    """Return a Philox generator for the integer key tuple ``keys``."""
    if not keys:
        raise ValueError("at least one key is required")
    seq = np.random.SeedSequence([int(k) for k in keys])
    return np.random.Generator(np.random.Philox(seq))
