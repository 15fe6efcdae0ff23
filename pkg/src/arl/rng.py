"""Named random streams derived from one 64-bit seed.

Stream ``k`` is ``numpy.random.default_rng(SeedSequence(seed, spawn_key=(k,)))``,
so every consumer draws from an independent, reproducible generator and
adding a consumer never shifts the draws of another.
"""

import numpy as np

STREAMS = {
    "population": 0,
    "overlap": 1,
    "init": 2,
    "phase1": 3,
    "phase2": 4,
}


def stream(seed: int, name: str) -> np.random.Generator:
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name],)))
