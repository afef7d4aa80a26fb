"""Seed-keyed deterministic streams shared by encoder and decoder.

The generator is SplitMix64: a 64-bit counter advanced by the golden-ratio
increment and passed through an xor-shift/multiply finalizer.  Uniforms are
the top 53 bits scaled to [0, 1).  ``mix_seed`` uses the same finalizer to
derive independent per-trial and per-purpose seeds, so results never depend
on how trials are scheduled.
"""
from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# stream tags for mix_seed(trial_seed, tag)
STREAM_SHIFT = 0
STREAM_NOISE = 1
STREAM_MESSAGE = 2
STREAM_VPOINT = 3


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(master: int, index: int) -> int:
    """Derive the seed of sub-stream ``index`` from ``master``."""
    return splitmix64((master & MASK64) ^ splitmix64(index & MASK64))


class SplitMix64:
    __slots__ = ("state", "draws")

    def __init__(self, seed: int):
        self.state = seed & MASK64
        self.draws = 0

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        self.draws += 1
        return z ^ (z >> 31)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def randbelow(self, bound: int) -> int:
        """Uniform integer in [0, bound) for arbitrarily large ``bound``."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        k = bound.bit_length()
        while True:
            r = 0
            got = 0
            while got < k:
                r = (r << 64) | self.next_u64()
                got += 64
            r >>= got - k
            if r < bound:
                return r
