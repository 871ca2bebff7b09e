"""Counter-based seed splitting.

Every stream is ``SeedSequence(root, spawn_key=(crc32(name), index))``, so a
stream depends only on the root seed, its name and its index, never on how
many other streams were drawn first.
"""

from __future__ import annotations

import zlib

import numpy as np


def sequence(root: int, name: str, index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root), spawn_key=(zlib.crc32(name.encode()), int(index)))


def derive(root: int, name: str, index: int = 0) -> int:
    """A 63-bit integer seed for stream ``name``/``index``."""
    hi, lo = sequence(root, name, index).generate_state(2, np.uint32)
    return int(((int(hi) << 32) | int(lo)) & ((1 << 63) - 1))


def generator(root: int, name: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(sequence(root, name, index))
