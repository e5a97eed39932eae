"""Counter-based Philox4x64-10 random streams.

Every trajectory owns an independent stream keyed by ``(base_seed, index)``.
Draws are a pure function of key and counter, so trajectories can be run in
any order (or concurrently) and still reproduce bit for bit.

The generator state used inside compiled kernels is a ``uint64[8]`` array::

    [key0, key1, counter, buffer_pos, buf0, buf1, buf2, buf3]
"""

from __future__ import annotations

import numpy as np
from numba import njit

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO_M53 = 1.0 / 9007199254740992.0

STATE_SIZE = 8


@njit(cache=True, inline="always")
def _mulhilo(a, b):
    a_lo = a & _LO32
    a_hi = a >> _S32
    b_lo = b & _LO32
    b_hi = b >> _S32
    lo_lo = a_lo * b_lo
    hi_lo = a_hi * b_lo
    lo_hi = a_lo * b_hi
    hi_hi = a_hi * b_hi
    cross = (lo_lo >> _S32) + (hi_lo & _LO32) + lo_hi
    hi = hi_hi + (hi_lo >> _S32) + (cross >> _S32)
    return hi, a * b


@njit(cache=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """One Philox4x64-10 block for counter ``(c0..c3)`` and key ``(k0, k1)``."""
    for r in range(10):
        if r > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@njit(cache=True)
def stream_init(state, seed, index):
    state[0] = np.uint64(seed)
    state[1] = np.uint64(index)
    state[2] = np.uint64(0)
    state[3] = np.uint64(4)


@njit(cache=True)
def next_uint64(state):
    if state[3] >= np.uint64(4):
        state[2] = state[2] + _ONE
        b0, b1, b2, b3 = philox4x64(state[2], np.uint64(0), np.uint64(0),
                                    np.uint64(0), state[0], state[1])
        state[4] = b0
        state[5] = b1
        state[6] = b2
        state[7] = b3
        state[3] = np.uint64(0)
    out = state[4 + np.int64(state[3])]
    state[3] = state[3] + _ONE
    return out


@njit(cache=True)
def next_uniform(state):
    """Uniform double on [0, 1) with 53 random bits."""
    return np.float64(next_uint64(state) >> _S11) * _TWO_M53


def new_stream(seed: int, index: int = 0) -> np.ndarray:
    """Fresh generator state for stream ``index`` of ``seed``."""
    if not (0 <= seed < 2 ** 64 and 0 <= index < 2 ** 64):
        raise ValueError("seed and stream index must fit in an unsigned 64-bit word")
    state = np.zeros(STATE_SIZE, dtype=np.uint64)
    stream_init(state, np.uint64(seed), np.uint64(index))
    return state


class PhiloxStream:
    """Python-side handle on one stream; mirrors what the kernels draw."""

    def __init__(self, seed: int, index: int = 0):
        self.seed = int(seed)
        self.index = int(index)
        self.state = new_stream(self.seed, self.index)

    def uniform(self) -> float:
        return float(next_uniform(self.state))

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([next_uniform(self.state) for _ in range(n)])

    def spawn(self, index: int) -> "PhiloxStream":
        return PhiloxStream(self.seed, index)
