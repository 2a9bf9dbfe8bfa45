"""Deterministic named randomness: every stream derives from one root seed."""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, *path: str) -> np.random.Generator:
    """Generator for a named sub-stream of the root seed.

    Same (seed, path) always yields the same stream, independent of call
    order, which is what makes pipeline runs reproducible.
    """
    digest = hashlib.blake2b("/".join(path).encode(), digest_size=8).digest()
    key = int.from_bytes(digest, "little")
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


class SplitMix64:
    """Tiny portable PRNG used for world generation.

    The exact draw sequence is part of the synthetic-world recipe so that
    independent implementations can reproduce the same world from a seed.
    """

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & self.MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return (z ^ (z >> 31)) & self.MASK

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0 ** -53)
