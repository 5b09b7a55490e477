"""Named, splittable seed derivation.

Every random draw in the package goes through :func:`child_rng` so that a
single master seed fixes a whole experiment, independent of the order in
which models or challenge points are processed.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2b(str(key).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def child_seed(seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=tuple(_key_int(k) for k in keys),
    )


def child_rng(seed: int, *keys) -> np.random.Generator:
    """Generator for the stream named by ``keys`` under ``seed``."""
    return np.random.default_rng(child_seed(seed, *keys))


def child_int(seed: int, *keys) -> int:
    """A 63-bit integer seed for the named stream."""
    return int(child_seed(seed, *keys).generate_state(1, np.uint64)[0] >> np.uint64(1))
