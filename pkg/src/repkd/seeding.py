"""Stable seed derivation.

Every random draw in the package flows through an explicit seed derived
from (global seed, purpose, coordinates).  Strings are folded in with
CRC32 so the derivation is stable across processes and platforms
(unlike builtin ``hash``).
"""

from __future__ import annotations

import zlib

import numpy as np


def stable_seed(*parts: int | str) -> list[int]:
    """Fold ints and strings into a seed sequence for np.random.default_rng."""
    out: list[int] = []
    for p in parts:
        if isinstance(p, str):
            out.append(zlib.crc32(p.encode("utf-8")))
        else:
            out.append(int(p) & 0xFFFFFFFF)
    return out


def rng_for(*parts: int | str) -> np.random.Generator:
    return np.random.default_rng(stable_seed(*parts))
