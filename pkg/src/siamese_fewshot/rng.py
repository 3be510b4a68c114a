"""Seed derivation helpers.

Every stochastic step takes either an integer seed or a ``numpy.random.Generator``.
Derived streams are built from ``SeedSequence`` spawn keys so that, for example,
fold 7 draws the same ids whether or not folds 0-6 ran first.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    # strings become stable 32-bit keys (hash() is salted per process)
    return zlib.crc32(str(part).encode("utf-8"))


def derive_seed(seed: int, *keys) -> int:
    """Return a 63-bit integer seed derived from ``seed`` and a path of keys."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def make_rng(seed: int, *keys) -> np.random.Generator:
    if keys:
        seed = derive_seed(seed, *keys)
    return np.random.default_rng(int(seed))
