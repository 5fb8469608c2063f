"""Sparse ternary random-projection hashing.

A hash of L bits is produced by L hyperplanes v in {-1, 0, +1}^d. Bit l is 1
iff v_l . x > 0 (ties hash to 0), and the bucket code packs the bits as

    code(x) = sum_{l=1..L} 2^(l-1) * bit_l(x)

so plane 0 owns the least significant bit. Hyperplane entries are sampled
independently: with probability s the entry is 0, otherwise +1 or -1 with
equal probability. Sampling consumes exactly one counter draw per entry,
plane by plane and coordinate by coordinate, so the planes for (seed, s, d, L)
are the first L planes of (seed, s, d, L') for any L' > L. Growing L can
therefore only split buckets, never fuse them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ConfigurationError

MAX_BITS = 62


@dataclass(frozen=True)
class HashConfig:
    """Parameters of the hash family.

    bits: number of hyperplanes L, 1..62 (codes must fit in a uint64).
    sparsity: probability s of a zero hyperplane entry, strictly inside (0, 1).
    dim: dimensionality d of the hashed vectors.
    seed: 64-bit root seed for plane generation.
    """

    bits: int
    sparsity: float
    dim: int
    seed: int

    def __post_init__(self):
        if not 1 <= self.bits <= MAX_BITS:
            raise ConfigurationError(f"bits must be in 1..{MAX_BITS}, got {self.bits}")
        if not 0.0 < self.sparsity < 1.0:
            raise ConfigurationError(f"sparsity must lie in (0, 1), got {self.sparsity}")
        if self.dim < 1:
            raise ConfigurationError(f"dim must be positive, got {self.dim}")
        if not 0 <= self.seed <= rng.MASK64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class HyperplaneSet:
    """L ternary hyperplanes of dimension d, row l holding bit l's plane.

    Normally produced by generate_hyperplanes; tests may construct one with
    hand-picked planes. Entries outside {-1, 0, +1} are rejected.
    """

    planes: np.ndarray
    _plus: tuple = field(init=False, repr=False, compare=False)
    _minus: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        planes = np.ascontiguousarray(self.planes, dtype=np.int8)
        if planes.ndim != 2:
            raise ConfigurationError("planes must be a 2-d array (L, d)")
        if planes.shape[0] < 1 or planes.shape[0] > MAX_BITS:
            raise ConfigurationError(f"plane count must be in 1..{MAX_BITS}")
        if not np.isin(planes, (-1, 0, 1)).all():
            raise ConfigurationError("plane entries must be -1, 0 or +1")
        planes.flags.writeable = False
        object.__setattr__(self, "planes", planes)
        object.__setattr__(
            self, "_plus", tuple(np.flatnonzero(row == 1) for row in planes)
        )
        object.__setattr__(
            self, "_minus", tuple(np.flatnonzero(row == -1) for row in planes)
        )

    @property
    def bits(self) -> int:
        return self.planes.shape[0]

    @property
    def dim(self) -> int:
        return self.planes.shape[1]

    @property
    def nonzero_entries(self) -> int:
        """Total non-zero entries; the signed additions spent per hashed vector."""
        return int(np.count_nonzero(self.planes))

    def bit_matrix(self, vectors: np.ndarray) -> np.ndarray:
        """Bits for a batch of row vectors, shape (n, L), dtype uint64.

        The projection is a signed sum over the non-zero plane entries in
        float64, the same arithmetic hash_bit performs, so scalar and batch
        paths agree bitwise.
        """
        x = np.asarray(vectors, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ConfigurationError(f"vectors must be (n, {self.dim})")
        bits = np.empty((x.shape[0], self.bits), dtype=np.uint64)
        for l in range(self.bits):
            proj = x[:, self._plus[l]].sum(axis=1) - x[:, self._minus[l]].sum(axis=1)
            bits[:, l] = proj > 0.0
        return bits


def generate_hyperplanes(cfg: HashConfig) -> HyperplaneSet:
    """Sample the ternary planes for a hash configuration.

    Entry (l, j) consumes counter draw l*d + j of the stream rooted at
    cfg.seed: u < s gives 0, then +1 and -1 split the remainder evenly.
    """
    u = rng.unit_block(cfg.seed, 0, cfg.bits * cfg.dim).reshape(cfg.bits, cfg.dim)
    half = cfg.sparsity + (1.0 - cfg.sparsity) / 2.0
    planes = np.where(u < cfg.sparsity, 0, np.where(u < half, 1, -1)).astype(np.int8)
    return HyperplaneSet(planes)


def hash_bit(x: np.ndarray, plane: np.ndarray) -> int:
    """One hash bit: 1 iff the signed sum over non-zero entries is > 0."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    v = np.asarray(plane)
    if x.shape[0] != v.shape[0]:
        raise ConfigurationError("vector and plane dimensions differ")
    proj = x[v > 0].sum() - x[v < 0].sum()
    return 1 if proj > 0.0 else 0


def hash_vector(x: np.ndarray, planes: HyperplaneSet) -> int:
    """Bucket code of a single vector under a plane set."""
    return int(hash_batch(np.asarray(x, dtype=np.float64).reshape(1, -1), planes)[0])


def hash_batch(vectors: np.ndarray, planes: HyperplaneSet) -> np.ndarray:
    """Bucket codes for a batch of row vectors, dtype uint64."""
    bits = planes.bit_matrix(vectors)
    codes = np.zeros(bits.shape[0], dtype=np.uint64)
    for l in range(planes.bits):
        codes |= bits[:, l] << np.uint64(l)
    return codes
