"""Deterministic random-stream derivation.

Every random draw in the package flows from one top-level integer seed.
Subsystems derive their own independent streams by hashing string/int tags
into a SeedSequence, so adding a draw in one place never perturbs another.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_to_int(tag: object) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def seed_sequence(seed: int, *tags: object) -> np.random.SeedSequence:
    """SeedSequence for the stream identified by ``(seed, *tags)``."""
    return np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                  spawn_key=tuple(_tag_to_int(t) for t in tags))


def rng_for(seed: int, *tags: object) -> np.random.Generator:
    """Independent generator for the stream identified by ``(seed, *tags)``."""
    return np.random.default_rng(seed_sequence(seed, *tags))
