"""Counter-based random streams.

Every random quantity in the device simulation is a pure function of
``(key, counters...)``, so draws do not depend on evaluation order and
recordings or devices can be processed in parallel with reproducible results.
The hash is SplitMix64's finalizer; normals come from Box-Muller.
"""
import zlib

import numpy as np
from numba import njit

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * np.pi


@njit(cache=True)
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def fold(key, word):
    """Derive a child key from ``key`` and one integer word."""
    return mix64(np.uint64(key) ^ mix64(np.uint64(word) + _GAMMA))


@njit(cache=True)
def uniform_at(key, a, b, c):
    """Uniform double in [0, 1) at counter ``(a, b, c)`` of stream ``key``."""
    h = fold(fold(fold(key, a), b), c)
    return np.float64(h >> _S11) * _INV53


@njit(cache=True)
def normal_at(key, a, b, c):
    """Standard normal at counter ``(a, b, c)`` of stream ``key``."""
    u1 = 1.0 - uniform_at(key, a, b, 2 * c)
    u2 = uniform_at(key, a, b, 2 * c + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


@njit(cache=True)
def normals_block(key, a, b, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = normal_at(key, a, b, i)
    return out


def stream_key(seed, *words):
    """Fold a master seed and any number of integer or string words into a key."""
    key = np.uint64(mix64(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)))
    for word in words:
        if isinstance(word, str):
            word = zlib.crc32(word.encode())
        key = np.uint64(fold(key, np.uint64(int(word) & 0xFFFFFFFFFFFFFFFF)))
    return key


def substream_seed(seed, name):
    """Integer seed for a named substream (dataset sampling, k-means, MI draws)."""
    return int(stream_key(seed, "substream", name) >> np.uint64(32))


def child_key(key, word):
    """Python-side :func:`fold` that keeps the unsigned 64-bit type."""
    return np.uint64(fold(np.uint64(key), np.uint64(word)))
