"""Counter-based deterministic random number generation.

Every random choice in this package flows through the splitmix64-style
generator below so that results are bit-reproducible across runs, platforms,
and independent reimplementations. The contract is:

    draw(seed, i) = mix64((seed + (i + 1) * GAMMA) mod 2^64)

where GAMMA = 0x9E3779B97F4A7C15 and mix64 is the splitmix64 finalizer
(xor-shift 30, multiply 0xBF58476D1CE4E5B9, xor-shift 27, multiply
0x94D049BB133111EB, xor-shift 31). Uniform floats in [0, 1) take the top 53
bits of the draw: unit(seed, i) = (draw(seed, i) >> 11) * 2^-53.

Draws are pure functions of (seed, i); there is no hidden stream state, so
any prefix of a draw sequence is independent of how many draws follow it.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFF_FFFF_FFFF_FFFF
GAMMA = 0x9E37_79B9_7F4A_7C15
_M1 = 0xBF58_476D_1CE4_E5B9
_M2 = 0x94D0_49BB_1331_11EB


def mix64(x: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * _M1) & MASK64
    x = ((x ^ (x >> 27)) * _M2) & MASK64
    return x ^ (x >> 31)


def draw(seed: int, index: int) -> int:
    """The index-th 64-bit draw of the stream rooted at seed."""
    if index < 0:
        raise ValueError("draw index must be non-negative")
    return mix64((seed + (index + 1) * GAMMA) & MASK64)


def unit(seed: int, index: int) -> float:
    """The index-th uniform float in [0, 1)."""
    return (draw(seed, index) >> 11) * 2.0**-53


def unit_block(seed: int, start: int, count: int) -> np.ndarray:
    """Vectorized unit(seed, start), ..., unit(seed, start + count - 1).

    Bit-identical to calling unit() in a loop; uint64 arithmetic wraps mod
    2^64 exactly as the scalar path does.
    """
    if start < 0 or count < 0:
        raise ValueError("start and count must be non-negative")
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = np.uint64(seed) + idx * np.uint64(GAMMA)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(_M1)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(_M2)
        x = x ^ (x >> np.uint64(31))
    return (x >> np.uint64(11)).astype(np.float64) * 2.0**-53


def derive_seed(seed: int, *path: int) -> int:
    """Derive a child seed from a root seed and an integer path.

    Used to give each swapped layer (and each image in random-grouping mode)
    its own independent stream while keeping everything a pure function of
    the configured global seed.
    """
    out = seed & MASK64
    for part in path:
        out = mix64((out ^ ((part + 1) * GAMMA)) & MASK64)
    return out


def shuffled(n: int, seed: int) -> np.ndarray:
    """Fisher-Yates permutation of range(n) driven by the counter stream."""
    perm = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        j = draw(seed, n - 1 - i) % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm
