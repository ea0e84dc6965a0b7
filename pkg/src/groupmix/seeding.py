"""Deterministic seed derivation for samplers, augmentation, and init."""

import hashlib


def derive_seed(*parts) -> int:
    """Map a tuple of ints/strings to a stable 63-bit seed.

    Uses blake2b rather than ``hash()`` so results do not depend on
    interpreter hash randomization; the same parts always give the same
    seed on any platform.
    """
    payload = "\x1f".join(repr(p) for p in parts).encode()
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1
