"""Deterministic, language-portable pseudorandom values.

The synthetic attention source and the dump exporter derive matrix entries
from the same 64-bit mixing function (the splitmix64 finalizer), so a
(seed, coordinates) key yields bit-identical doubles in any implementation,
regardless of language, platform, or array library.

Key derivation: fold the coordinates left to right,

    h0 = seed
    h_{i+1} = mix64(h_i XOR coord_i)

then map the final 64-bit state to a double in [-1, 1) by taking the top
53 bits as the mantissa: sym = ((h >> 11) * 2^-53) * 2 - 1.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer over uint64 arrays (elementwise, wrapping)."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = x + _GOLDEN
        x = (x ^ (x >> _U64(30))) * _MIX1
        x = (x ^ (x >> _U64(27))) * _MIX2
        return x ^ (x >> _U64(31))


_MASK_INT = (1 << 64) - 1


def fold(seed: int, *coords: int) -> int:
    """Fold integer coordinates into a single 64-bit key."""
    h = np.array([seed & _MASK_INT], dtype=np.uint64)
    for c in coords:
        h = mix64(h ^ np.array([c & _MASK_INT], dtype=np.uint64))
    return int(h[0])


def to_sym(h: np.ndarray) -> np.ndarray:
    """Map uint64 hashes to doubles in [-1, 1)."""
    return (np.asarray(h, dtype=np.uint64) >> _U64(11)).astype(np.float64) * 2.0**-53 * 2.0 - 1.0


def sym_grid(seed: int, prefix: tuple[int, ...], rows: int, cols: int) -> np.ndarray:
    """(rows, cols) array of doubles in [-1, 1), entry (r, c) keyed by
    fold(seed, *prefix, r, c)."""
    base = np.array([fold(seed, *prefix)], dtype=np.uint64)
    r = mix64(base ^ np.arange(rows, dtype=np.uint64))
    h = mix64(r[:, None] ^ np.arange(cols, dtype=np.uint64)[None, :])
    return to_sym(h)


def sym_vector(seed: int, prefix: tuple[int, ...], n: int) -> np.ndarray:
    """Length-n vector of doubles in [-1, 1), entry i keyed by
    fold(seed, *prefix, i)."""
    base = np.array([fold(seed, *prefix)], dtype=np.uint64)
    return to_sym(mix64(base ^ np.arange(n, dtype=np.uint64)))
