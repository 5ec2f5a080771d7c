"""
Seed derivation for deterministic, order-independent randomness.

Every random draw in the pipeline comes from a generator derived from a base
seed plus string keys (stage, tile id, cluster id), so results do not depend
on iteration or thread order.
"""

import hashlib
from typing import Union

import numpy as np

Key = Union[str, int]


def derive_seed(seed: int, *keys: Key) -> int:
    """
    Derive a 64-bit child seed from a base seed and keys.

    Args:
        seed: Base seed
        *keys: Any number of string/int keys naming the substream

    Returns:
        Unsigned 64-bit integer seed
    """
    h = hashlib.sha256(str(int(seed)).encode("utf-8"))
    for key in keys:
        h.update(b"\x1f")
        h.update(str(key).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(seed: int, *keys: Key) -> np.random.Generator:
    """Return a numpy Generator for the substream (seed, *keys)."""
    return np.random.default_rng(np.random.SeedSequence(derive_seed(seed, *keys)))
