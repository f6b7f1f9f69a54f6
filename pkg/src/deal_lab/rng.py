"""Seeded, counter-based random streams.

Every random draw in the package goes through :func:`stream`, which builds a
fresh Philox generator from an explicit key tuple. There is no module-level
generator, so results never depend on call order across components.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _word(part: int | str) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.sha256(part.encode("utf-8")).digest()[:4], "little")
    if not 0 <= part < 2**64:
        raise ValueError(f"seed components must fit in u64, got {part}")
    return int(part)


def stream(*key: int | str) -> np.random.Generator:
    """Return a Philox generator keyed by ``key`` (ints and/or string tags)."""
    words = []
    for part in key:
        value = _word(part)
        # fixed two 32-bit words per component keeps keys unambiguous
        words.extend((value & 0xFFFFFFFF, value >> 32))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
