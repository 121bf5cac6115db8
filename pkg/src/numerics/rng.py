"""Counter-based random streams.

A stream is addressed by (seed, stream index, counter). Draws are produced by
the Philox4x64 counter-based generator keyed on (seed, stream index), so any
trajectory's noise can be regenerated without replaying other trajectories.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

ALGORITHM = "philox4x64-ndtri"
_MASK64 = (1 << 64) - 1
_WORDS_PER_BLOCK = 4


@dataclass
class RngStream:
    seed: int
    stream: int
    counter: int = 0
    algorithm: str = ALGORITHM

    def key(self) -> int:
        return ((self.stream & _MASK64) << 64) | (self.seed & _MASK64)

    def to_dict(self):
        return {"algorithm": self.algorithm, "seed": self.seed, "stream": self.stream, "counter": self.counter}


def sample_standard_normal(stream: RngStream, n: int) -> np.ndarray:
    """n i.i.d. N(0, 1) draws; advances ``stream.counter`` by ceil(n / 4) Philox blocks."""
    if n < 1:
        return np.empty(0)
    bitgen = np.random.Philox(key=stream.key(), counter=stream.counter)
    raw = bitgen.random_raw(n)
    # 53-bit uniforms strictly inside (0, 1)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    stream.counter += -(-n // _WORDS_PER_BLOCK)
    return ndtri(u)


def batch_normals(seed: int, first_stream: int, batch: int, shape) -> np.ndarray:
    """Draw ``shape`` normals for each of ``batch`` consecutive streams; returns (batch, *shape)."""
    shape = tuple(np.atleast_1d(shape).astype(int))
    n = int(np.prod(shape))
    out = np.empty((batch,) + shape)
    for i in range(batch):
        out[i] = sample_standard_normal(RngStream(seed, first_stream + i), n).reshape(shape)
    return out


__all__ = ["ALGORITHM", "RngStream", "sample_standard_normal", "batch_normals"]
