"""Seeded random streams.

Every random operation draws from a PCG64 generator whose seed sequence is
built from the user's 64-bit master seed plus a task key (strings and ints).
Keys are hashed with BLAKE2b, so a task's stream depends only on its key and
never on the order tasks are scheduled in.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_word(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        part = int(part)
    if isinstance(part, (int, np.integer)):
        token = f"i:{int(part)}"
    elif isinstance(part, (float, np.floating)):
        token = f"f:{float(part)!r}"
    else:
        token = f"s:{part}"
    return int.from_bytes(hashlib.blake2b(token.encode(), digest_size=8).digest(), "little")


def seed_sequence(seed: int, *key) -> np.random.SeedSequence:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.SeedSequence(seed, spawn_key=tuple(_key_word(k) for k in key))


def derive_rng(seed: int, *key) -> np.random.Generator:
    """Generator for task ``key`` under master ``seed``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *key)))


def derive_seed(seed: int, *key) -> int:
    """A 64-bit child seed, for handing a derived stream to another API."""
    return int(seed_sequence(seed, *key).generate_state(1, np.uint64)[0])
