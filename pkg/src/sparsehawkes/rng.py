"""Counter-based splittable random numbers (SplitMix64).

Replicate streams must be independent, reproducible across platforms, and
cheap to derive, so simulation code does not use numpy's global generator.
The generator is the SplitMix64 sequence: the state advances by the odd
constant 0x9E3779B97F4A7C15 and the output is the murmur-style finalizer

    z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27; z *= 0x94D049BB133111EB
    z ^= z >> 31

Stream ``i`` of a master seed ``m`` starts from ``mix64(m + i * GOLDEN)``
(the documented split rule).  All arithmetic is modulo 2**64.  The same
functions are compiled with numba for use inside simulation kernels.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15

_U_GOLDEN = np.uint64(GOLDEN)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO53 = 1.0 / 9007199254740992.0  # 2**-53


def mix64(x: int) -> int:
    """SplitMix64 output finalizer on a 64-bit integer."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def split_seed(master: int, index: int) -> int:
    """Seed of substream ``index`` derived from ``master``.

    seed_i = mix64(master + i * GOLDEN); substreams of distinct indices are
    disjoint SplitMix64 sequences for all practical stream lengths.
    """
    return mix64((master + (index % (1 << 64)) * GOLDEN) & MASK64)


@njit(cache=True, nogil=True)
def _mix64_nb(z):
    z = (z ^ (z >> _U30)) * _M1
    z = (z ^ (z >> _U27)) * _M2
    return z ^ (z >> _U31)


@njit(cache=True, nogil=True)
def next_u64(state):
    """Advance the length-1 uint64 state array, return the next output."""
    state[0] = state[0] + _U_GOLDEN
    return _mix64_nb(state[0])


@njit(cache=True, nogil=True)
def next_u01(state):
    """Uniform draw in the open interval (0, 1)."""
    z = next_u64(state)
    return (float(z >> _U11) + 0.5) * _TWO53


@njit(cache=True, nogil=True)
def next_exponential(state, rate):
    """Exponential draw with the given rate (mean 1/rate)."""
    return -np.log(next_u01(state)) / rate


@njit(cache=True, nogil=True)
def next_normal(state):
    """Standard normal draw by the Box-Muller transform (cosine branch)."""
    u1 = next_u01(state)
    u2 = next_u01(state)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def make_state(seed: int) -> np.ndarray:
    """Length-1 uint64 state array starting the stream of ``seed``."""
    return np.array([seed & MASK64], dtype=np.uint64)
