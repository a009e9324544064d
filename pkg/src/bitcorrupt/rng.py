"""Portable seeded randomness.

SplitMix64 (Steele, Lea & Flood 2014) is used everywhere a draw ends up in a
log, so that selections can be reproduced bit-for-bit from any language:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

all arithmetic mod 2**64. Independent streams are keyed by ``derive``,
which folds a tuple of integers into a fresh 64-bit state.
"""
from __future__ import annotations

import hashlib

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive(seed: int, *counters: int) -> int:
    """Counter-based child seed: fold each counter into the seed via mix64."""
    state = seed & MASK64
    for c in counters:
        state = mix64((state + GOLDEN * ((c & MASK64) + 1)) & MASK64)
    return state


def keyed_seed(master_seed: int, label: str) -> int:
    """64-bit seed from (master_seed, label) via keyed BLAKE2b."""
    h = hashlib.blake2b(
        label.encode("utf-8"), digest_size=8, key=(master_seed & MASK64).to_bytes(8, "little")
    )
    return int.from_bytes(h.digest(), "little")


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection (no modulo bias)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % bound

    def sample(self, population: list, k: int) -> list:
        """k distinct items, in draw order, by partial Fisher-Yates.

        The first j picks do not depend on k, so samples of growing size
        from the same state are nested.
        """
        pool = list(population)
        k = min(k, len(pool))
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
