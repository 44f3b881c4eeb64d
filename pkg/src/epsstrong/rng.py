"""Reproducible per-path random streams.

Every Monte Carlo path owns one :class:`RngStream` keyed by ``(seed, stream_index)``.
The stream index is the path index, so results never depend on how paths are
distributed over workers.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class RngStream:
    """A numpy ``Generator`` bound to a ``(seed, stream_index)`` pair.

    Streams with equal keys produce identical sequences; distinct stream
    indices are spawned children of the same ``SeedSequence`` and are
    statistically independent. A stream must not be shared by two threads
    at the same time.
    """

    __slots__ = ("seed", "stream_index", "generator")

    def __init__(self, seed: int, stream_index: int = 0):
        if seed is None:
            raise ValueError("seed is mandatory")
        self.seed = int(seed) & _MASK64
        self.stream_index = int(stream_index) & _MASK64
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_index,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_index={self.stream_index})"

    def uniform_open(self, size=None):
        """Uniform variates on (0, 1]; never exactly zero."""
        return 1.0 - self.generator.random(size)

    def normal(self, size=None):
        # numpy's ziggurat sampler
        return self.generator.standard_normal(size)

    def signs(self, size=None):
        """Rademacher variates as float64 (+1.0 / -1.0)."""
        bits = self.generator.integers(0, 2, size=size, dtype=np.int8)
        return 2.0 * bits - 1.0


def streams(seed: int, start: int, stop: int):
    """Streams for path indices ``start .. stop-1``."""
    return [RngStream(seed, i) for i in range(start, stop)]
