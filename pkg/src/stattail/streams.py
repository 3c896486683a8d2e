"""Counter-based random streams.

Every random number used by the package is a pure function of
``(seed, stream, counter)``: the seed selects the experiment, the stream
selects one draw or trial, and the counter indexes positions inside that
stream.  Because nothing is carried between calls, work can be split over
any number of workers in any order and still reproduce bit-for-bit.

The mixing function is the SplitMix64 finalizer applied twice, once to
derive a per-stream key and once to turn ``key + counter * golden`` into
output bits.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_MASK64 = (1 << 64) - 1
_INV53 = 1.0 / (1 << 53)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _as_u64(value) -> np.ndarray:
    if isinstance(value, (int, np.integer)):
        return np.asarray(int(value) & _MASK64, dtype=np.uint64)
    return np.asarray(value).astype(np.uint64, copy=False)


def stream_keys(seed: int, streams) -> np.ndarray:
    """Per-stream 64-bit keys derived by hashing ``(seed, stream)``."""
    with np.errstate(over="ignore"):
        s = _mix64(_as_u64(seed) ^ np.uint64(0x6A09E667F3BCC909))
        return _mix64(s + (_as_u64(streams) + np.uint64(1)) * _GOLDEN)


def bits(keys: np.ndarray, counters) -> np.ndarray:
    """Raw 64-bit outputs for the given keys at the given counters."""
    with np.errstate(over="ignore"):
        z = _mix64(keys + (_as_u64(counters) + np.uint64(1)) * _GOLDEN)
        return _mix64(z ^ keys)


def uniform(keys: np.ndarray, counters) -> np.ndarray:
    """Uniform doubles in the open interval (0, 1); 53 bits of resolution."""
    b = bits(keys, counters) >> _S11
    return (b.astype(np.float64) + 0.5) * _INV53


def normal(keys: np.ndarray, counters) -> np.ndarray:
    """Standard normals via Box-Muller on counters ``2c`` and ``2c + 1``."""
    c = _as_u64(counters) * np.uint64(2)
    u1 = uniform(keys, c)
    u2 = uniform(keys, c + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


class Stream:
    """A single sequential stream, the scalar view of ``(seed, stream_id)``.

    Successive calls to :meth:`next_uniform` walk the counter forward, so two
    ``Stream`` objects built from the same pair replay identical numbers.
    """

    def __init__(self, seed: int, stream_id: int = 0, start: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.counter = int(start)
        self.key = stream_keys(self.seed, np.array([self.stream_id], dtype=np.uint64))

    def next_uniform(self) -> float:
        u = uniform(self.key, np.array([self.counter], dtype=np.uint64))[0]
        self.counter += 1
        return float(u)

    def uniforms(self, count: int) -> np.ndarray:
        ctr = np.arange(self.counter, self.counter + count, dtype=np.uint64)
        self.counter += count
        return uniform(self.key, ctr)
