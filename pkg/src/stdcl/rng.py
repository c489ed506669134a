"""Named, seedable random streams.

Every stochastic component (init, shuffling, bank sampling, data synthesis)
draws from its own stream so that consuming one stream never perturbs
another.  Streams are derived from (seed, crc32(name)) which is stable
across processes and platforms.
"""

from __future__ import annotations

import zlib

import numpy as np


def seeded_rng(seed: int, stream: str) -> np.random.Generator:
    """Return the generator for the named stream of a master seed."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(stream.encode("utf-8"))])
