"""Named random streams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, *names: str | int) -> np.random.Generator:
    """Independent generator for ``(seed, *names)``; stable across runs and call order."""
    key = tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def sub_seed(seed: int, *names: str | int) -> int:
    return int(stream(seed, *names).integers(0, 2**31 - 1))
