"""Portable random number generation and seed derivation.

Shuffles and fold orders use :class:`XorShift64Star` so that a given seed
yields the same permutation in any language that implements the same
constants. Everything else (k-means seeding, sampling, bootstrap draws) uses
numpy generators seeded through :func:`derive_seed`.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1

# splitmix64 constants (Steele, Lea, Flood 2014)
_SM_GAMMA = 0x9E3779B97F4A7C15
_SM_MUL1 = 0xBF58476D1CE4E5B9
_SM_MUL2 = 0x94D049BB133111EB

# xorshift64* (Vigna 2016): shifts 12, 25, 27 and output multiplier
_XS_MUL = 0x2545F4914F6CDD1D


def splitmix64(x: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    x = (x + _SM_GAMMA) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * _SM_MUL1) & _MASK64
    z = ((z ^ (z >> 27)) * _SM_MUL2) & _MASK64
    return x, z ^ (z >> 31)


class XorShift64Star:
    """xorshift64* generator seeded through one splitmix64 step.

    The state is never zero: a zero splitmix output is replaced by the
    splitmix gamma constant.
    """

    def __init__(self, seed: int):
        _, state = splitmix64(int(seed) & _MASK64)
        self.state = state or _SM_GAMMA

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * _XS_MUL) & _MASK64

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of ``range(n)``, swapping from the back."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx


def derive_seed(root: int, *parts: object) -> int:
    """Derive a 63-bit child seed from a root seed and a task path.

    ``derive_seed(7, "model", 3)`` hashes the text ``"7/model/3"`` with
    SHA-256 and keeps the first 8 bytes (big endian), top bit cleared.
    """
    text = "/".join([str(int(root))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & ((1 << 63) - 1)


def generator(seed: int, *parts: object) -> np.random.Generator:
    """numpy ``Generator`` for ``derive_seed(seed, *parts)`` (or ``seed`` itself when no parts)."""
    s = derive_seed(seed, *parts) if parts else int(seed)
    return np.random.default_rng(s)
