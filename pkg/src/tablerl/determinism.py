"""Stable hashing for seeds and feature buckets.

Python's builtin ``hash`` is randomized per process, so every place that needs
a reproducible hash (sub-seed derivation, feature hashing, per-request mock
RNG) goes through blake2b here.
"""

from __future__ import annotations

import hashlib


def stable_hash64(text: str) -> int:
    """Deterministic 64-bit hash of a string, identical across processes."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def derive_seed(*parts) -> int:
    """Mix arbitrary parts (ints, strings) into one reproducible seed."""
    return stable_hash64("\x1f".join(str(p) for p in parts))
