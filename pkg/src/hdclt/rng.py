"""Counter-based random streams for reproducible parallel Monte Carlo.

Every random quantity in this package is a pure function of a 64-bit seed
and an integer counter.  The stream derivation is a SplitMix64-style
avalanche::

    mix64(seed, counter) = finalize(seed + GAMMA * (counter + 1))   mod 2**64

where ``finalize`` is the xor-shift/multiply output function of SplitMix64
and ``GAMMA`` is the golden-ratio increment 0x9E3779B97F4A7C15.  Substreams
are derived by nesting: row ``i`` of a dataset drawn with seed ``s`` uses
the key ``mix64(s, i)``, and the ``t``-th 64-bit word of that row is
``mix64(mix64(s, i), t)``.  Because every word is a closed-form function of
(seed, counters), generation is order-independent: any partition of the
work across threads or batches produces bit-identical output.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

MASK64 = 0xFFFFFFFFFFFFFFFF
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_U64_GAMMA = np.uint64(GAMMA)
_U64_MIX1 = np.uint64(_MIX1)
_U64_MIX2 = np.uint64(_MIX2)

# (word >> 11) spans [0, 2**53); adding 0.5 and scaling by 2**-53 gives (0, 1)
_INV53 = float(2.0 ** -53)


def mix64(seed: int, counter: int) -> int:
    """Avalanche mix of a seed and a counter into a 64-bit word.

    Pure integer arithmetic; agrees bit for bit with the vectorized
    helpers below.
    """
    z = (seed + GAMMA * (counter + 1)) & MASK64
    z ^= z >> 30
    z = (z * _MIX1) & MASK64
    z ^= z >> 27
    z = (z * _MIX2) & MASK64
    z ^= z >> 31
    return z


def _finalize(z: np.ndarray) -> np.ndarray:
    t = np.empty_like(z)
    np.right_shift(z, np.uint64(30), out=t)
    np.bitwise_xor(z, t, out=z)
    np.multiply(z, _U64_MIX1, out=z)
    np.right_shift(z, np.uint64(27), out=t)
    np.bitwise_xor(z, t, out=z)
    np.multiply(z, _U64_MIX2, out=z)
    np.right_shift(z, np.uint64(31), out=t)
    np.bitwise_xor(z, t, out=z)
    return z


def mix64_array(seed: int, counters: np.ndarray) -> np.ndarray:
    """Vectorized ``mix64`` of one seed against an array of counters."""
    z = counters.astype(np.uint64, copy=True)
    z += np.uint64(1)
    z *= _U64_GAMMA
    z += np.uint64(int(seed) & MASK64)
    return _finalize(z)


def mix64_keys(keys: np.ndarray, counter: int) -> np.ndarray:
    """Elementwise ``mix64(keys[...], counter)`` for an array of seeds."""
    z = keys.astype(np.uint64, copy=True)
    z += np.uint64(((counter + 1) * GAMMA) & MASK64)
    return _finalize(z)


def words(key: int, count: int, offset: int = 0) -> np.ndarray:
    """64-bit words ``mix64(key, offset + t)`` for t = 0..count-1."""
    c = np.arange(offset, offset + count, dtype=np.uint64)
    return mix64_array(key, c)


def word_grid(keys: np.ndarray, count: int, offset: int = 0) -> np.ndarray:
    """Words for many keys at once; returns shape ``keys.shape + (count,)``.

    ``word_grid(keys, c)[..., t] == mix64(keys[...], t)`` element-wise.
    """
    c = np.arange(offset, offset + count, dtype=np.uint64)
    pre = (c + np.uint64(1)) * _U64_GAMMA
    z = keys.astype(np.uint64)[..., None] + pre
    return _finalize(z)


def to_uniform(w: np.ndarray) -> np.ndarray:
    """Map 64-bit words to doubles in the open interval (0, 1).

    Uses the top 53 bits plus a half-step offset, so 0 and 1 are never hit.
    """
    u = (w >> np.uint64(11)).astype(np.float64)
    u += 0.5
    u *= _INV53
    return u


def to_normal(w: np.ndarray) -> np.ndarray:
    """Map 64-bit words to standard normals via the inverse Gaussian CDF."""
    return ndtri(to_uniform(w))


def uniforms(key: int, count: int, offset: int = 0) -> np.ndarray:
    return to_uniform(words(key, count, offset))


def normals(key: int, count: int, offset: int = 0) -> np.ndarray:
    return to_normal(words(key, count, offset))
