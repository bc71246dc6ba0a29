"""Seedable 64-bit xorshift* generator.

The state is seeded through one round of splitmix64 (so nearby seeds give
unrelated streams) and advanced with Marsaglia's xorshift64* step:

    x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27;  out = x * 0x2545F4914F6CDD1D

Floats use the top 53 bits of the output.  Everything is pure integer
arithmetic, so streams are identical on every platform.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(*parts: int) -> int:
    """Combine integers into one 64-bit seed."""
    acc = 0x6A09E667F3BCC909
    for p in parts:
        acc = splitmix64(acc ^ (int(p) & MASK64))
    return acc


class XorShift64Star:
    def __init__(self, seed: int):
        state = splitmix64(int(seed) & MASK64)
        self.state = state or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def random(self) -> float:
        """Uniform float in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi)."""
        return lo + self.next_u64() % (hi - lo)

    def choice(self, seq):
        return seq[self.randint(0, len(seq))]

    def normal(self) -> float:
        """Standard normal via Box-Muller."""
        u1 = 1.0 - self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
