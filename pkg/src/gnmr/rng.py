"""Seeded random streams.

Every logical stream is a Philox-4x64-10 counter-based generator whose key is
derived by ``numpy.random.SeedSequence([seed, tag, *extra])``. The tag
constants below are part of the reproducibility contract; do not renumber.
"""

from __future__ import annotations

import numpy as np

TAGS = {
    "factors": 0x01,
    "pattern": 0x02,
    "noise": 0x03,
    "gaussian": 0x04,
    "probe": 0x05,
    "init": 0x06,
    "svd": 0x07,
    "trial": 0x08,
    "perturb": 0x09,
    "power": 0x0A,
}


def stream(seed: int, tag: str, *extra: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seeds must be nonnegative")
    ss = np.random.SeedSequence([int(seed), TAGS[tag], *map(int, extra)])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *extra: int) -> int:
    """A 63-bit child seed, e.g. one per (grid point, trial) of a sweep."""
    ss = np.random.SeedSequence([int(seed), TAGS["trial"], *map(int, extra)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
