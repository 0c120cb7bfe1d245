"""Deterministic seed derivation.

Every stochastic component draws from a seed derived from the master seed
plus a scope path (strings/ints naming the consumer). Derivation is a hash,
so adding a new consumer never shifts the seeds of existing ones.
"""

from __future__ import annotations

import hashlib

_MASK63 = (1 << 63) - 1


def derive_seed(master: int, *scope: object) -> int:
    """Derive a stable 63-bit seed from a master seed and a scope path."""
    h = hashlib.sha256(str(int(master)).encode("ascii"))
    for part in scope:
        h.update(b"/")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little") & _MASK63
