"""Counter-based per-sample random streams on top of numpy's Philox.

Sample ``i`` at evaluation point ``p`` of run ``r`` owns a stream that is a
pure function of (seed, run, p, i):

* its first PREFIX uniforms come from Philox counter block
  [i * PREFIX_BLOCKS, p, 0, 0] under key (seed, run);
* anything beyond that comes from a private Philox stream at counter
  [0, p, i, 1] under the same key.

The two regions never overlap.  Because the prefix of consecutive samples is
contiguous in counter space, a whole block of samples can be drawn with one
vectorized call, and results do not depend on how samples are grouped into
blocks or workers.

Uniforms are (k + 1/2) / 2**53 for the top 53 bits k of each 64-bit word, so
they lie strictly inside (0, 1).
"""

from __future__ import annotations

import math
from statistics import NormalDist

import numpy as np

PREFIX_BLOCKS = 4  # Philox counter increments per sample prefix
PREFIX = 4 * PREFIX_BLOCKS  # 64-bit words per counter increment is 4
_MASK64 = (1 << 64) - 1
_SCALE = 2.0**-53
_HALF = 2.0**-54
inv_normal_cdf = NormalDist().inv_cdf


def _key(seed: int, run: int) -> int:
    return (seed & _MASK64) | ((run & _MASK64) << 64)


def _to_unit(raw: np.ndarray) -> np.ndarray:
    return (raw >> np.uint64(11)).astype(np.float64) * _SCALE + _HALF


class SampleStream:
    """Uniform/exponential/Gaussian draws for one Monte Carlo sample."""

    __slots__ = ("_buf", "_pos", "_key", "_point", "_index", "_overflow", "_used")

    def __init__(self, prefix: list[float], key: int, point: int, index: int):
        self._buf = prefix
        self._pos = 0
        self._key = key
        self._point = point
        self._index = index
        self._overflow = None
        self._used = 0  # draws discarded from earlier buffers

    @classmethod
    def create(cls, seed: int, point: int, index: int, run: int = 0) -> "SampleStream":
        key = _key(seed, run)
        bg = np.random.Philox(key=key, counter=[index * PREFIX_BLOCKS, point, 0, 0])
        return cls(_to_unit(bg.random_raw(PREFIX)).tolist(), key, point, index)

    def _refill(self, count: int) -> None:
        if self._overflow is None:
            self._overflow = np.random.Philox(
                key=self._key, counter=[0, self._point, self._index, 1]
            )
        self._used += self._pos
        self._buf = self._buf[self._pos:] + _to_unit(
            self._overflow.random_raw(max(count, 64))
        ).tolist()
        self._pos = 0

    def uniform(self) -> float:
        if self._pos >= len(self._buf):
            self._refill(1)
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def uniforms(self, count: int) -> np.ndarray:
        if self._pos + count > len(self._buf):
            self._refill(count)
        out = self._buf[self._pos:self._pos + count]
        self._pos += count
        return np.asarray(out)

    def exponential(self, rate: float) -> float:
        """Inverse-CDF exponential draw (one uniform)."""
        return -math.log(self.uniform()) / rate

    def normal(self, mean: float, var: float) -> float:
        """Inverse-CDF Gaussian draw (one uniform)."""
        return mean + math.sqrt(var) * inv_normal_cdf(self.uniform())

    @property
    def draws(self) -> int:
        return self._used + self._pos


def block_streams(seed: int, point: int, start: int, count: int, run: int = 0):
    """Streams for samples start .. start+count-1, drawn in one Philox call."""
    key = _key(seed, run)
    bg = np.random.Philox(key=key, counter=[start * PREFIX_BLOCKS, point, 0, 0])
    prefix = _to_unit(bg.random_raw(PREFIX * count)).tolist()
    for j in range(count):
        yield SampleStream(prefix[j * PREFIX:(j + 1) * PREFIX], key, point, start + j)
