"""Seeded random streams.

Every stream is numpy's PCG64 bit generator seeded through a
``SeedSequence``; named sub-streams are derived from the root seed and a
fixed integer key, so adding a stream never shifts the others.
"""
from __future__ import annotations

import zlib

import numpy as np

ALGORITHM = "PCG64 via numpy.random.SeedSequence"


def _key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, *names: str) -> np.random.Generator:
    """Independent generator for ``seed`` and a path of stream names."""
    if seed < 0:
        raise ValueError("seeds must be nonnegative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.PCG64(ss))
