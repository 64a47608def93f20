"""Counter-based random numbers for reproducible rendering.

Every stochastic stage draws uniforms through a stateless hash of
(seed, pixel index, sample index, dimension).  There is no sequential
generator state, so results do not depend on evaluation order or on the
number of worker threads, and the same key always yields the same value
on every platform.

Two equivalent implementations are provided: scalar functions that can
be called from inside numba kernels, and vectorized numpy versions for
array code.  A unit test pins them against each other.
"""

from __future__ import annotations

import numpy as np
from numba import njit

U64 = np.uint64

# Mixing constants: golden-ratio gamma and the murmur3 fmix64 multipliers.
_GAMMA = U64(0x9E3779B97F4A7C15)
_M1 = U64(0xFF51AFD7ED558CCD)
_M2 = U64(0xC4CEB9FE1A85EC53)
_INV53 = float(2.0 ** -53)

# Stream tags keep independent consumers decorrelated under one base seed.
STREAM_AO = 1
STREAM_SHADE = 2
STREAM_AUGMENT = 3


@njit(cache=True, inline="always")
def _fmix64(h):
    h = h ^ (h >> U64(33))
    h = h * _M1
    h = h ^ (h >> U64(33))
    h = h * _M2
    h = h ^ (h >> U64(33))
    return h


@njit(cache=True, inline="always")
def hash4(seed, a, b, c):
    """Mix four nonnegative integers into one well-scrambled uint64."""
    h = (U64(seed) + _GAMMA) * _M1
    h = (h ^ U64(a)) * _M2
    h = (h ^ U64(b)) * _M1
    h = (h ^ U64(c)) * _M2
    return _fmix64(h)


@njit(cache=True, inline="always")
def u01(seed, a, b, c):
    """Uniform float in [0, 1) keyed by (seed, a, b, c)."""
    return float(hash4(seed, a, b, c) >> U64(11)) * _INV53


@njit(cache=True, inline="always")
def stream_seed(seed, stream):
    """Derive a per-stream seed so different consumers never share keys."""
    return _fmix64((U64(seed) ^ (U64(stream) * _GAMMA)) + _M2)


_MASK = (1 << 64) - 1


def hash4_array(seed, a, b, c):
    """Vectorized twin of hash4; broadcasts over uint64 arrays."""
    a = np.atleast_1d(np.asarray(a, dtype=np.uint64))
    b = np.asarray(b, dtype=np.uint64)
    c = np.asarray(c, dtype=np.uint64)
    h0 = ((int(seed) + 0x9E3779B97F4A7C15) * 0xFF51AFD7ED558CCD) & _MASK
    h = (np.uint64(h0) ^ a) * _M2
    h = (h ^ b) * _M1
    h = (h ^ c) * _M2
    h = h ^ (h >> U64(33))
    h = h * _M1
    h = h ^ (h >> U64(33))
    h = h * _M2
    h = h ^ (h >> U64(33))
    return h


def u01_array(seed, a, b, c):
    """Vectorized twin of u01."""
    return (hash4_array(seed, a, b, c) >> U64(11)).astype(np.float64) * _INV53


def stream_seed_py(seed, stream):
    """Python-side twin of stream_seed (returns a plain int)."""
    h = ((int(seed) ^ ((int(stream) * 0x9E3779B97F4A7C15) & _MASK))
         + 0xC4CEB9FE1A85EC53) & _MASK
    h = h ^ (h >> 33)
    h = (h * 0xFF51AFD7ED558CCD) & _MASK
    h = h ^ (h >> 33)
    h = (h * 0xC4CEB9FE1A85EC53) & _MASK
    h = h ^ (h >> 33)
    return h
