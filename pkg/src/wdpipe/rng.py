"""Deterministic seeded random streams.

Weight initialization draws from a splitmix64 counter stream so that
parameter buffers are bit-reproducible for a given seed independent of
numpy's generator internals.  Everything coarser grained (shuffles,
sampling, image synthesis) uses numpy's seeded ``Generator``.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def derive_seed(seed: int, offset: int) -> int:
    """Sub-stream seed: ``seed + offset`` in 64-bit unsigned arithmetic."""
    return (int(seed) + int(offset)) & _MASK64


def splitmix64(seed: int, count: int) -> np.ndarray:
    """Return ``count`` pseudo-random uint64 words of the stream ``seed``."""
    idx = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(seed & _MASK64) + idx * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def uniform_stream(seed: int, count: int, low: float, high: float) -> np.ndarray:
    """Uniform float64 values in ``[low, high)`` from a splitmix64 stream."""
    u = (splitmix64(seed, count) >> np.uint64(11)).astype(np.float64) / float(1 << 53)
    return low + (high - low) * u
