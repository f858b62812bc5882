"""Stable seed derivation shared by exam, teacher, and training code.

Child seeds must not depend on iteration order or platform hash salts, so
they are derived from sha256 over the string forms of the key parts.
"""

from __future__ import annotations

import hashlib


def stable_seed(*parts: str | int) -> int:
    """A 63-bit seed derived deterministically from the given parts."""
    joined = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(joined.encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1
