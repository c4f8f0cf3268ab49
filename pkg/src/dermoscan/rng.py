"""Seedable randomness.

Every random draw in the package flows through numpy's PCG64 generator so
that a fixed seed reproduces runs bit-for-bit.  Derived streams (per sample,
per epoch, ...) are built from ``numpy.random.SeedSequence`` with integer
keys, which gives statistically independent streams without hand-rolled
seed arithmetic.
"""

from __future__ import annotations

import zlib

import numpy as np

RngLike = "int | np.random.Generator | np.random.SeedSequence"


def make_rng(seed) -> np.random.Generator:
    """Return a PCG64 generator. Accepts an int seed, a SeedSequence, or an
    existing Generator (returned unchanged)."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(int(seed)))


def stable_key(text: str) -> int:
    """A stable non-cryptographic integer key for a string (CRC32)."""
    return zlib.crc32(text.encode("utf-8"))


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Derive an independent generator from a base seed plus context keys.

    String keys are folded through CRC32 so sample ids can be used directly.
    """
    ints = [int(seed)]
    for k in keys:
        ints.append(stable_key(k) if isinstance(k, str) else int(k))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(ints)))
