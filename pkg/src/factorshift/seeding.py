"""Deterministic seed derivation shared by suites, demos, and rollouts.

Seeds must be a pure function of suite/run identity (never of the policy)
so that compared models consume identical randomness.  The hash is a fixed
8-byte blake2b digest, stable across processes and platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stable_hash64(*parts: object) -> int:
    """64-bit hash of a tuple of printable parts; stable across runs."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def derive_seed(seed_base: int, domain: str, *parts: object) -> int:
    """Mix a base seed with a domain tag and identity parts.

    Distinct domains ("eval", "demo", "route", ...) keep the seed streams
    of different pipeline stages disjoint.
    """
    return (seed_base ^ stable_hash64(domain, *parts)) & _MASK64


def rng_from(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
