"""Dense tensor primitives: feature maps, filter banks, padding, direct conv.

Numeric conventions used throughout the package:

* payloads are 32-bit floats in row-major (C-contiguous) layout;
* reductions accumulate in 64-bit floats and round once on output;
* one FLOP is one floating multiply or add, so a multiply-accumulate
  costs 2 FLOPs. Comparisons, index arithmetic and copies are free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ValidationError


def _as_f32(data: np.ndarray, rank: int, what: str) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != rank:
        raise ValidationError(f"{what} must have rank {rank}, got {arr.ndim}")
    if not all(s > 0 for s in arr.shape):
        raise ValidationError(f"{what} dimensions must be positive, got {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FeatureMap:
    """A single (channels, height, width) activation tensor."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_f32(self.data, 3, "feature map"))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FilterBank:
    """Convolution weights shaped (out_channels, in_channels, K, K), K odd."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_f32(self.data, 4, "filter bank"))
        co, ci, kh, kw = self.data.shape
        if kh != kw:
            raise ValidationError(f"kernels must be square, got {kh}x{kw}")
        if kh % 2 == 0:
            raise ValidationError(f"kernel size must be odd, got {kh}")

    @property
    def out_channels(self) -> int:
        return self.data.shape[0]

    @property
    def in_channels(self) -> int:
        return self.data.shape[1]

    @property
    def kernel(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class PaddingSpec:
    """Zero padding amounts per side. The fill value is fixed to zero."""

    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0
    fill: float = field(default=0.0)

    def __post_init__(self):
        for name in ("top", "bottom", "left", "right"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ConfigurationError(f"padding {name} must be a non-negative int")
        if self.fill != 0.0:
            raise ConfigurationError("padding fill is fixed to zero")

    @classmethod
    def same(cls, kernel: int) -> "PaddingSpec":
        """Symmetric padding that keeps a K x K convolution size-preserving."""
        if kernel % 2 == 0 or kernel < 1:
            raise ConfigurationError(f"kernel size must be odd and positive, got {kernel}")
        p = (kernel - 1) // 2
        return cls(p, p, p, p)


@dataclass
class FlopCounter:
    """Mutable tally of floating-point multiplies and adds.

    Divisions are tracked separately; by the package convention a division
    also costs 1 FLOP.
    """

    mults: int = 0
    adds: int = 0
    divs: int = 0

    @property
    def total(self) -> int:
        return self.mults + self.adds + self.divs

    def merge(self, other: "FlopCounter") -> None:
        self.mults += other.mults
        self.adds += other.adds
        self.divs += other.divs


def pad(fmap: FeatureMap, spec: PaddingSpec) -> FeatureMap:
    """Zero-pad a feature map per side. Returns a new map; input is untouched."""
    c, h, w = fmap.data.shape
    out = np.zeros((c, h + spec.top + spec.bottom, w + spec.left + spec.right), dtype=np.float32)
    out[:, spec.top : spec.top + h, spec.left : spec.left + w] = fmap.data
    return FeatureMap(out)


def conv2d_direct(
    fmap: FeatureMap,
    filters: FilterBank,
    padding: PaddingSpec | None = None,
    counter: FlopCounter | None = None,
) -> FeatureMap:
    """Size-preserving direct convolution (cross-correlation orientation).

    output[j, y, x] = sum_i sum_{u,v} filters[j, i, u, v] * padded[i, y+u, x+v]

    Padding must keep the output spatial size equal to the input's, i.e.
    top+bottom == left+right == K-1. Accumulation is in float64; the result
    is rounded to float32 once. When a counter is given it is charged the
    regular-convolution cost 2*H*W*K^2*C_in*C_out (K^2*C_in multiplies and as
    many accumulating adds per output pixel).
    """
    k = filters.kernel
    if padding is None:
        padding = PaddingSpec.same(k)
    if fmap.channels != filters.in_channels:
        raise ValidationError(
            f"channel mismatch: map has {fmap.channels}, filters expect {filters.in_channels}"
        )
    if padding.top + padding.bottom != k - 1 or padding.left + padding.right != k - 1:
        raise ConfigurationError("padding must preserve the spatial size (sums to K-1 per axis)")

    c, h, w = fmap.data.shape
    padded = pad(fmap, padding).data.astype(np.float64)
    # im2col: windows (H, W, C, K, K) viewed without copying, then one GEMM.
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    cols = win.transpose(1, 2, 0, 3, 4).reshape(h * w, c * k * k)
    weights = filters.data.astype(np.float64).reshape(filters.out_channels, c * k * k)
    out = cols @ weights.T
    if counter is not None:
        macs = h * w * k * k * c * filters.out_channels
        counter.mults += macs
        counter.adds += macs
    return FeatureMap(out.T.reshape(filters.out_channels, h, w).astype(np.float32))


def mac_count_regular(c_in: int, c_out: int, h: int, w: int, k: int) -> int:
    """FLOPs of a size-preserving K x K convolution: 2*H*W*K^2*C_in*C_out."""
    for name, v in (("c_in", c_in), ("c_out", c_out), ("h", h), ("w", w), ("k", k)):
        if v < 1:
            raise ConfigurationError(f"{name} must be positive, got {v}")
    return 2 * h * w * k * k * c_in * c_out
