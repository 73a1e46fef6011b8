"""Counter-based random streams.

Every stochastic routine in the package draws from an explicit stream
identified by a (seed, stream_id) pair.  Streams are backed by Philox, a
counter-based generator, so distinct pairs give statistically independent
output and the same pair reproduces bit-identical draws regardless of how
many other streams were consumed in between.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """A reproducible, splittable random stream."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64):
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        if not (0 <= self.stream_id <= _MASK64):
            raise ValueError(f"stream_id must fit in 64 bits, got {self.stream_id}")

    def generator(self) -> np.random.Generator:
        # Philox key is 128 bits: high word = seed, low word = stream_id.
        key = (self.seed << 64) | self.stream_id
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, k: int) -> "RngStream":
        """Derive a sub-stream; children of distinct streams never collide.

        The stream_id space is partitioned by hashing (stream_id, k) through
        SplitMix64, which is injective on 64-bit words.
        """
        x = (self.stream_id * 0x9E3779B97F4A7C15 + k + 1) & _MASK64
        x ^= x >> 30
        x = (x * 0xBF58476D1CE4E5B9) & _MASK64
        x ^= x >> 27
        x = (x * 0x94D049BB133111EB) & _MASK64
        x ^= x >> 31
        return RngStream(self.seed, x)


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream or a ready Generator."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng)!r}")
