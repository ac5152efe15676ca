"""Seed-derivation tree: master seed -> module -> worker -> episode.

Every stochastic draw in a run comes from a generator built here; nothing
touches numpy's global RNG.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: int | str) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("seed path integers must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode())


def derive_seed(master: int, *path: int | str) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(master), spawn_key=tuple(_key(p) for p in path))


def derive_rng(master: int, *path: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *path))
