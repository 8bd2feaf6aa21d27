"""Counter-based random streams.

Every draw is a pure function of ``(seed, replica, step, lane, coordinate)``,
so a replica's noise does not depend on how many replicas run alongside it,
on execution order, or on how many draws earlier steps consumed.  Uniforms
come from the SplitMix64 finalizer applied to the hashed counter tuple and
Gaussians from the inverse normal CDF.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

LANE_INIT = 0
LANE_NOISE = 1
LANE_INDEX = 2


def _mix(x):
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def _as_u64(value) -> np.ndarray:
    arr = np.asarray(value)
    if arr.dtype.kind == "i":
        return arr.astype(np.int64).view(np.uint64)
    return arr.astype(np.uint64)


class CounterRNG:
    """Random source for a set of replicas sharing one seed.

    Draw methods return arrays whose leading axis runs over ``replicas``.
    """

    def __init__(self, seed: int, replicas=(0,)):
        self.seed = int(seed)
        self.replicas = np.atleast_1d(np.asarray(replicas, dtype=np.int64))
        with np.errstate(over="ignore"):
            base = _mix(_as_u64(np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF)))
            self._keys = _mix(base ^ _mix(_as_u64(self.replicas)))

    def __len__(self):
        return len(self.replicas)

    def subset(self, rows) -> "CounterRNG":
        return CounterRNG(self.seed, self.replicas[rows])

    def _bits(self, step: int, lane: int, size: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            k = _mix(self._keys ^ _mix(_as_u64(np.int64(step)) ^ (np.uint64(lane) << np.uint64(56))))
            coords = _as_u64(np.arange(size, dtype=np.int64))
            return _mix(k[:, None] ^ _mix(coords)[None, :])

    def uniform(self, step: int, size: int, lane: int = LANE_NOISE) -> np.ndarray:
        """Uniforms on the open interval (0, 1), shape ``(replicas, size)``."""
        bits = self._bits(step, lane, size) >> np.uint64(11)
        return (bits.astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, step: int, size: int, lane: int = LANE_NOISE) -> np.ndarray:
        return ndtri(self.uniform(step, size, lane))

    def integers(self, step: int, high: int, size: int = 1, lane: int = LANE_INDEX) -> np.ndarray:
        """Integers uniform on ``{0, ..., high-1}``, shape ``(replicas, size)``."""
        u = self.uniform(step, size, lane)
        return np.minimum((u * high).astype(np.int64), high - 1)
