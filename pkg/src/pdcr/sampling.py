"""Deterministic, order-independent random streams.

Every draw is a pure function of (key, position): draw t re-seeds a fresh
numpy generator from the tuple (*key, t). Two streams built from the same
key replay the same sequence, and a consumer that knows its position can
reproduce any single draw without replaying the ones before it. This is
what makes parallel trial scheduling independent of execution order.
"""

from __future__ import annotations

import numpy as np

__all__ = ["SampleStream"]


class SampleStream:
    """Counter-based random stream keyed by a tuple of non-negative ints."""

    def __init__(self, *key: int):
        if not key:
            raise ValueError("stream key must not be empty")
        k = tuple(int(x) for x in key)
        if any(x < 0 for x in k):
            raise ValueError(f"stream key parts must be >= 0, got {k}")
        self._key = k
        self._pos = 0

    @property
    def position(self) -> int:
        return self._pos

    def skip(self, n: int) -> None:
        """Advance the counter without drawing."""
        if n < 0:
            raise ValueError("cannot skip backwards")
        self._pos += n

    def _take(self) -> np.random.Generator:
        rng = np.random.default_rng(self._key + (self._pos,))
        self._pos += 1
        return rng

    def next_index(self, n: int) -> int:
        """Uniform draw from {0..n-1}."""
        if n < 1:
            raise ValueError(f"cannot draw from an empty range (n={n})")
        return int(self._take().integers(n))

    def next_rng(self) -> np.random.Generator:
        """Dedicated generator for one draw position (noise fills etc.)."""
        return self._take()
