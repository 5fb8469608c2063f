"""Cost model for the hashed convolution pipeline.

All formulas count 1 FLOP per floating multiply, add or division; a
multiply-accumulate is 2 FLOPs. Comparisons, index arithmetic and bit packing
are free. `patches` is the number of rasterized patches, side = K + 2g is the
patch edge, and r = 1 - C_reduced / C_in is the per-layer compression ratio.

Two accounting modes exist:

* exact: per-patch censuses (r_p, m_p, reduced channel counts, valid kernel
  positions) are summed, and the hashing term counts the additions actually
  performed (one per realized non-zero plane entry per channel per patch).
  Exact tallies match the instrumented operation counts integer-exactly for
  every component.
* averaged: closed paper-style formulas evaluated at (mean_r, mean_m). The
  hashing term uses the expected-density form L*(K+2g)^2*(1-s) and the
  reduced_conv term the H*W form, which ignores the boundary-position skip
  rule; both discrepancies are visible by comparing against the exact mode,
  never hidden.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


def _check(**kwargs) -> None:
    for name, v in kwargs.items():
        if v < 0:
            raise ConfigurationError(f"{name} must be non-negative, got {v}")


def _side2(k: int, g: int) -> int:
    if k % 2 == 0 or k < 1:
        raise ConfigurationError(f"kernel size must be odd and positive, got {k}")
    if g < 1:
        raise ConfigurationError(f"halo must be positive, got {g}")
    return (k + 2 * g) ** 2


def flops_centering(patches: int, c_in: int, k: int, g: int) -> int:
    """Mean-pass plus subtraction-pass cost: 2 * patches * C_in * (K+2g)^2.

    Decomposes per coordinate as (C_in - 1) accumulating adds, one division,
    and C_in subtractions, which is exactly 2 * C_in operations for every
    C_in >= 1 (including the degenerate single-channel case).
    """
    _check(patches=patches, c_in=c_in)
    return 2 * patches * c_in * _side2(k, g)


def flops_hashing(patches: int, c_in: int, bits: int, k: int, g: int, sparsity: float) -> int:
    """Expected signed additions: patches * C_in * L * (K+2g)^2 * (1-s).

    The general (1-s) density form, rounded half-even to an integer; this is
    the averaged-mode term. Exact mode instead counts the realized number of
    non-zero plane entries, which converges to this value in expectation.
    """
    _check(patches=patches, c_in=c_in, bits=bits)
    if not 0.0 < sparsity < 1.0:
        raise ConfigurationError(f"sparsity must lie in (0, 1), got {sparsity}")
    return round(patches * c_in * bits * _side2(k, g) * (1.0 - sparsity))


def flops_merge_fms(patches: int, c_in: int, k: int, g: int, r: float, m: float) -> int:
    """Feature merging cost: patches * (K+2g)^2 * (C_in * r + m).

    C_in * r accumulating adds per coordinate plus one division per merged
    bucket (the m term). Singleton buckets are copies and cost nothing.
    """
    _check(patches=patches, c_in=c_in)
    if r < 0.0 or m < 0.0:
        raise ConfigurationError("r and m must be non-negative")
    return round(patches * _side2(k, g) * (c_in * r + m))


def flops_merge_filters(patches: int, c_in: int, c_out: int, k: int, r: float) -> int:
    """Filter merging cost: patches * C_out * C_in * r * K^2 (additions only)."""
    _check(patches=patches, c_in=c_in, c_out=c_out)
    if r < 0.0:
        raise ConfigurationError("r must be non-negative")
    return round(patches * c_out * c_in * r * k * k)


def flops_reduced_conv(h: int, w: int, k: int, c_in: int, c_out: int, r: float) -> int:
    """Reduced convolution cost, H*W closed form: 2*H*W*K^2*C_in*(1-r)*C_out."""
    _check(h=h, w=w, c_in=c_in, c_out=c_out)
    if r < 0.0:
        raise ConfigurationError("r must be non-negative")
    return round(2 * h * w * k * k * c_in * (1.0 - r) * c_out)


@dataclass
class ComponentTally:
    """Per-component FLOP tallies for the five pipeline stages."""

    centering: int = 0
    hashing: int = 0
    merge_fms: int = 0
    merge_filters: int = 0
    reduced_conv: int = 0

    @property
    def total(self) -> int:
        return self.centering + self.hashing + self.merge_fms + self.merge_filters + self.reduced_conv

    def add(self, other: "ComponentTally") -> None:
        self.centering += other.centering
        self.hashing += other.hashing
        self.merge_fms += other.merge_fms
        self.merge_filters += other.merge_filters
        self.reduced_conv += other.reduced_conv


@dataclass(frozen=True)
class FlopsLedger:
    """Analytic cost of one hashed layer application plus its measured mirror.

    The five component fields are the analytic tallies under `mode`;
    `measured` mirrors them with instrumented counts gathered while the layer
    actually ran. `regular_baseline` is the dense-convolution cost
    2*H*W*K^2*C_in*C_out of the layer being replaced.
    """

    mode: str
    centering: int
    hashing: int
    merge_fms: int
    merge_filters: int
    reduced_conv: int
    regular_baseline: int
    measured: ComponentTally
    mean_r: float
    mean_m: float
    patch_count: int

    def __post_init__(self):
        if self.mode not in ("exact", "averaged"):
            raise ConfigurationError(f"unknown ledger mode {self.mode!r}")
        for name in ("centering", "hashing", "merge_fms", "merge_filters", "reduced_conv"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"ledger component {name} is negative")
        if self.regular_baseline <= 0:
            raise ConfigurationError("regular_baseline must be positive")

    @property
    def total(self) -> int:
        return self.centering + self.hashing + self.merge_fms + self.merge_filters + self.reduced_conv

    @property
    def reduction(self) -> float:
        """Fraction of the dense baseline saved; negative when overhead wins."""
        return 1.0 - self.total / self.regular_baseline


def ledger_total(ledger: FlopsLedger) -> int:
    """Sum of the five analytic components."""
    return ledger.total


def exact_components(
    c_in: int,
    c_out: int,
    k: int,
    g: int,
    plane_nonzeros: int,
    reduced_per_patch: np.ndarray,
    merged_per_patch: np.ndarray,
    valid_per_patch: np.ndarray,
) -> ComponentTally:
    """Exact-mode analytic components from per-patch censuses.

    plane_nonzeros is the realized count of non-zero hyperplane entries (one
    signed addition each per hashed channel vector). reduced_per_patch holds
    the per-patch reduced channel counts, merged_per_patch the per-patch
    counts of buckets holding >= 2 channels, valid_per_patch the per-patch
    numbers of kernel positions whose output pixel lies inside the original
    spatial extent.
    """
    _check(plane_nonzeros=plane_nonzeros)
    reduced = np.asarray(reduced_per_patch, dtype=np.int64)
    merged = np.asarray(merged_per_patch, dtype=np.int64)
    valid = np.asarray(valid_per_patch, dtype=np.int64)
    patches = reduced.size
    side2 = _side2(k, g)
    dropped = int((c_in - reduced).sum())
    return ComponentTally(
        centering=flops_centering(patches, c_in, k, g),
        hashing=patches * c_in * plane_nonzeros,
        merge_fms=side2 * (dropped + int(merged.sum())),
        merge_filters=k * k * c_out * dropped,
        reduced_conv=2 * k * k * c_out * int((reduced * valid).sum()),
    )


def averaged_components(
    c_in: int,
    c_out: int,
    h: int,
    w: int,
    k: int,
    g: int,
    bits: int,
    sparsity: float,
    patches: int,
    mean_r: float,
    mean_m: float,
) -> ComponentTally:
    """Averaged-mode analytic components from (mean_r, mean_m)."""
    return ComponentTally(
        centering=flops_centering(patches, c_in, k, g),
        hashing=flops_hashing(patches, c_in, bits, k, g, sparsity),
        merge_fms=flops_merge_fms(patches, c_in, k, g, mean_r, mean_m),
        merge_filters=flops_merge_filters(patches, c_in, c_out, k, mean_r),
        reduced_conv=flops_reduced_conv(h, w, k, c_in, c_out, mean_r),
    )
