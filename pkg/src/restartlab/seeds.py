"""Deterministic seed derivation.

All randomized stages accept a 64-bit master seed and derive independent
substream seeds from it by hashing, so that results never depend on scheduling
or on how many worker processes are used.
"""

from __future__ import annotations

import hashlib

MASK64 = (1 << 64) - 1


def normalize_seed(seed: int) -> int:
    """Clamp an arbitrary int into the unsigned 64-bit seed space."""
    return seed & MASK64


def derive_seed(master: int, *path: object) -> int:
    """Derive a child seed from a master seed and a label path.

    The same (master, path) pair always yields the same child on every
    platform; distinct paths yield independent-looking streams.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(normalize_seed(master)).encode("ascii"))
    for part in path:
        h.update(b"/")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest(), "big")
