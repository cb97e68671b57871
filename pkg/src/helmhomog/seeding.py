"""Stateless seed derivation shared by samplers and the sweep driver."""

from __future__ import annotations

import hashlib
import struct

U64 = 2**64


def derive_seed(master: int, stream: str, index: int) -> int:
    """64-bit child seed from ``(master, stream, index)``.

    The mixing function is BLAKE2b with an 8-byte digest over the
    little-endian master seed, the UTF-8 stream label and the little-endian
    signed index. It is platform independent and collision-free in practice.
    """
    if not 0 <= master < U64:
        raise ValueError("master seed must be a 64-bit unsigned integer")
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", master))
    label = stream.encode("utf-8")
    h.update(struct.pack("<I", len(label)))
    h.update(label)
    h.update(struct.pack("<q", index))
    return int.from_bytes(h.digest(), "little")
