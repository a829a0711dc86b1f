"""Deterministic 64-bit hashing used for every derived seed in the package.

FNV-1a is small enough to restate exactly and has published constants, so
seeds reproduce across languages and numpy versions. All randomness anywhere
in the package flows from named 64-bit seeds through these helpers; nothing
reads the wall clock.
"""

from __future__ import annotations

import struct

FNV_OFFSET_BASIS = 14695981039346656037
FNV_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes | str) -> int:
    """FNV-1a hash of ``data`` as an unsigned 64-bit integer."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def derive_seed(text: str) -> int:
    """Seed for a prompt: FNV-1a of its UTF-8 bytes."""
    if not text:
        raise ValueError("derive_seed requires non-empty text")
    return fnv1a_64(text)


def combine_seed(master_seed: int, index: int) -> int:
    """Per-item seed from a master seed and a record index.

    Hashes the two values' little-endian byte encodings so that record i can
    be regenerated in isolation, in any order, on any worker.
    """
    payload = struct.pack("<QQ", master_seed & _MASK64, index & _MASK64)
    return fnv1a_64(payload)


def tagged_seed(master_seed: int, tag: str) -> int:
    """Named sub-seed, e.g. tagged_seed(seed, "rotation-2")."""
    payload = struct.pack("<Q", master_seed & _MASK64) + tag.encode("utf-8")
    return fnv1a_64(payload)
