"""The hashed channel-merging convolution operator.

Pipeline, once per patch of the rasterized input:

1. flatten each channel's patch window and center the resulting vectors;
2. hash every centered vector with shared sparse ternary hyperplanes;
3. bucket channels by hash code, merge each bucket's input channels by MEAN
   and the corresponding filter channels by SUM (distributivity keeps the
   merged convolution close to the dense one wherever bucketed channels are
   close);
4. run the reduced convolution on the patch core and write the core's output
   pixels.

The operator is training-free and data-free: it needs only the incoming
activations and the layer's existing filter bank, which is never mutated.

Geometry for odd K >= 3: the input is first zero-padded by the layer's own
convolution padding, then zero-padded on the right/bottom until the spatial
size divides the core step K, then wrapped in a g-pixel zero halo. Patch
cores (K x K) tile that grid with step K; each patch sees side K + 2g and
emits only its core's output pixels, each produced exactly once. Kernel
positions whose output pixel would land outside the original H x W (possible
only on boundary patches) are skipped. This needs g >= (K-1)/2, true for the
usual K=3 with g in {1, 2, 3}.

K = 1 follows the pointwise variant: no convolution padding, non-overlapping
3 x 3 patches (pad to a multiple of 3), 9-dimensional hashes, and the padded
output region cropped away.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import flops, rng
from .errors import ConfigurationError, ValidationError
from .lsh import HashConfig, HyperplaneSet, hash_batch
from .tensors import FeatureMap, FilterBank, PaddingSpec, mac_count_regular

SELECTION_MODES = ("lsh", "random")
CENTER_MODES = ("vector", "scalar")


@dataclass(frozen=True)
class HasteConfig:
    """Operator configuration.

    hash: the hyperplane family; hash.dim must equal (K + 2*halo)^2 for
        K >= 3 and 9 for K = 1.
    halo: overlap pixels g added around each K x K core (1 for K = 1).
    selection_mode: "lsh" groups channels by hash code; "random" keeps the
        LSH bucket SIZES of a reference pass but fills them with uniformly
        permuted channels (the control experiment).
    random_seed: seed for the random selection mode.
    center_mode: "vector" subtracts the coordinate-wise mean across channels
        (default); "scalar" subtracts each channel's own scalar mean
        (experimental alternative reading).
    """

    hash: HashConfig
    halo: int = 1
    selection_mode: str = "lsh"
    random_seed: int = 0
    center_mode: str = "vector"

    def __post_init__(self):
        if self.halo < 1:
            raise ConfigurationError(f"halo must be >= 1, got {self.halo}")
        if self.selection_mode not in SELECTION_MODES:
            raise ConfigurationError(f"selection_mode must be one of {SELECTION_MODES}")
        if self.center_mode not in CENTER_MODES:
            raise ConfigurationError(f"center_mode must be one of {CENTER_MODES}")
        if not 0 <= self.random_seed <= rng.MASK64:
            raise ConfigurationError("random_seed must be an unsigned 64-bit integer")

    def expected_dim(self, kernel: int) -> int:
        if kernel == 1:
            return 9
        return (kernel + 2 * self.halo) ** 2


@dataclass(frozen=True)
class Patch:
    """One rasterized patch: grid coordinates plus its (C, side, side) window."""

    grid_y: int
    grid_x: int
    slab: np.ndarray


@dataclass(frozen=True)
class PatchGrid:
    """Rasterization result: geometry plus a strided view of every patch.

    slabs has shape (ny, nx, C, side, side) and aliases one shared zero-padded
    array; patches() materializes the spec-level list of Patch records.
    """

    height: int
    width: int
    kernel: int
    halo: int
    pad: PaddingSpec
    ny: int
    nx: int
    slabs: np.ndarray

    @property
    def side(self) -> int:
        return self.kernel + 2 * self.halo

    @property
    def patch_count(self) -> int:
        return self.ny * self.nx

    def patches(self) -> list[Patch]:
        return [
            Patch(iy, ix, self.slabs[iy, ix])
            for iy in range(self.ny)
            for ix in range(self.nx)
        ]

    def valid_box(self, iy: int, ix: int) -> tuple[int, int, int, int]:
        """Core rows/cols (dy0, dy1, dx0, dx1) whose output pixel is real.

        Kernel centers live at divisibility-padded coordinates; only centers
        inside [p, OH+p) x [p, OW+p) with p = (K-1)/2 map to output pixels,
        where OH x OW is the convolution's output size (equal to H x W for
        size-preserving padding).
        """
        k, p = self.kernel, (self.kernel - 1) // 2
        oh = self.height + self.pad.top + self.pad.bottom - k + 1
        ow = self.width + self.pad.left + self.pad.right - k + 1
        dy0 = max(p - iy * k, 0)
        dy1 = min(oh + p - iy * k, k)
        dx0 = max(p - ix * k, 0)
        dx1 = min(ow + p - ix * k, k)
        return dy0, max(dy1, dy0), dx0, max(dx1, dx0)


@dataclass(frozen=True)
class BucketAssignment:
    """A partition of channels into buckets, ordered by ascending code.

    codes: per-channel bucket code (uint64). order/starts/counts give the
    partition in merge form: order lists channel indices grouped bucket by
    bucket, starts marks each bucket's offset into order, counts its size.
    Channel indices are ascending inside every bucket.
    """

    codes: np.ndarray
    order: np.ndarray
    starts: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if self.counts.sum() != self.order.size or self.codes.size != self.order.size:
            raise ValidationError("bucket assignment does not partition the channels")
        if np.unique(self.order).size != self.order.size:
            raise ValidationError("bucket assignment repeats a channel")

    @property
    def channels(self) -> int:
        return self.order.size

    @property
    def reduced_channels(self) -> int:
        return self.counts.size

    @property
    def merged_buckets(self) -> int:
        """Number of buckets actually holding >= 2 channels (the m statistic)."""
        return int((self.counts >= 2).sum())

    @property
    def ratio(self) -> float:
        """Compression ratio r = 1 - reduced / original."""
        return 1.0 - self.reduced_channels / self.channels

    def groups(self) -> list[np.ndarray]:
        return np.split(self.order, np.cumsum(self.counts)[:-1])


def rasterize(fmap: FeatureMap, kernel: int, halo: int, padding: PaddingSpec | None = None) -> PatchGrid:
    """Split a feature map into overlapping patches with K x K cores.

    padding is the convolution's own zero padding (defaults to the symmetric
    size-preserving choice); the divisibility padding and the halo are added
    here. Patch count is ceil((H+P_H)/K) * ceil((W+P_W)/K).
    """
    if kernel < 3 or kernel % 2 == 0:
        raise ConfigurationError(f"rasterize needs odd K >= 3, got {kernel}")
    if halo < (kernel - 1) // 2:
        raise ConfigurationError(
            f"halo must be >= (K-1)/2 so cores stay computable, got g={halo} for K={kernel}"
        )
    if padding is None:
        padding = PaddingSpec.same(kernel)

    c, h, w = fmap.data.shape
    h1, w1 = h + padding.top + padding.bottom, w + padding.left + padding.right
    ny, nx = math.ceil(h1 / kernel), math.ceil(w1 / kernel)
    side = kernel + 2 * halo
    grid = np.zeros((c, ny * kernel + 2 * halo, nx * kernel + 2 * halo), dtype=np.float64)
    grid[:, halo + padding.top : halo + padding.top + h, halo + padding.left : halo + padding.left + w] = fmap.data

    win = np.lib.stride_tricks.sliding_window_view(grid, (side, side), axis=(1, 2))
    slabs = win[:, ::kernel, ::kernel].transpose(1, 2, 0, 3, 4)
    return PatchGrid(h, w, kernel, halo, padding, ny, nx, slabs)


def flatten_center(patch: Patch | np.ndarray, mode: str = "vector") -> np.ndarray:
    """Flatten a patch to (C, side^2) and center it for hashing.

    "vector" subtracts the coordinate-wise mean over channels so constant
    offsets shared by all channels cancel; "scalar" subtracts each channel's
    own mean. Float64 either way.
    """
    slab = patch.slab if isinstance(patch, Patch) else patch
    if slab.ndim != 3:
        raise ValidationError("patch payload must be (C, side, side)")
    flat = np.asarray(slab, dtype=np.float64).reshape(slab.shape[0], -1)
    if mode == "vector":
        return flat - flat.mean(axis=0)
    if mode == "scalar":
        return flat - flat.mean(axis=1, keepdims=True)
    raise ConfigurationError(f"center_mode must be one of {CENTER_MODES}")


def assign_buckets(vectors: np.ndarray, planes: HyperplaneSet) -> BucketAssignment:
    """Bucket row vectors by hash code (codes ascending, channels ascending)."""
    codes = hash_batch(vectors, planes)
    order = np.argsort(codes, kind="stable").astype(np.int64)
    sorted_codes = codes[order]
    boundary = np.flatnonzero(sorted_codes[1:] != sorted_codes[:-1]) + 1
    starts = np.concatenate(([0], boundary)).astype(np.int64)
    counts = np.diff(np.concatenate((starts, [codes.size]))).astype(np.int64)
    return BucketAssignment(codes, order, starts, counts)


def assign_random(channels: int, sizes: np.ndarray, seed: int) -> BucketAssignment:
    """Partition uniformly permuted channels into buckets of the given sizes.

    The control arm of the grouping ablation: bucket count and sizes match a
    reference LSH assignment exactly (so r and m are identical), membership
    is random. Synthetic codes 0..n-1 keep the bucket order stable.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.sum() != channels or sizes.size == 0 or (sizes < 1).any():
        raise ConfigurationError("bucket sizes must be positive and sum to the channel count")
    perm = rng.shuffled(channels, seed)
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.int64)
    order = np.empty(channels, dtype=np.int64)
    codes = np.empty(channels, dtype=np.uint64)
    for b, (s0, sz) in enumerate(zip(starts, sizes)):
        members = np.sort(perm[s0 : s0 + sz])
        order[s0 : s0 + sz] = members
        codes[members] = b
    return BucketAssignment(codes, order, starts, sizes)


def merge_input(patch: Patch | np.ndarray, assignment: BucketAssignment) -> np.ndarray:
    """Mean-merge a patch's channels bucket by bucket -> (C_reduced, side, side).

    Means are taken over the raw (uncentered) values in float64.
    """
    slab = patch.slab if isinstance(patch, Patch) else patch
    flat = np.asarray(slab, dtype=np.float64).reshape(slab.shape[0], -1)
    sums = np.add.reduceat(flat[assignment.order], assignment.starts, axis=0)
    merged = sums / assignment.counts[:, None]
    return merged.reshape(assignment.reduced_channels, slab.shape[1], slab.shape[2])


def merge_filters(filters: FilterBank | np.ndarray, assignment: BucketAssignment) -> np.ndarray:
    """Sum-merge filter input channels bucket by bucket.

    Returns (C_out, C_reduced, K, K) in float64. The original bank is never
    touched; merging happens on a gathered copy.
    """
    data = filters.data if isinstance(filters, FilterBank) else filters
    if data.shape[1] != assignment.channels:
        raise ValidationError("filter bank input channels do not match the assignment")
    f64 = np.asarray(data, dtype=np.float64)
    return np.add.reduceat(f64[:, assignment.order], assignment.starts, axis=1)


def reduced_conv(
    reduced_patch: np.ndarray,
    reduced_filters: np.ndarray,
    halo: int,
    valid_box: tuple[int, int, int, int] | None = None,
) -> tuple[np.ndarray, int]:
    """Convolve merged filters over a merged patch's core positions.

    Returns (core block (C_out, K, K) float32, positions computed). Core
    positions outside valid_box = (dy0, dy1, dx0, dx1) are skipped and left
    zero; by default all K x K core positions are computed (for K=3, g=1
    these are the nine positions a 3 x 3 kernel can take inside a 5 x 5
    patch). Accumulation is float64, rounded to float32 on output.
    """
    c_red, side, _ = reduced_patch.shape
    c_out, c_red2, k, _ = reduced_filters.shape
    if c_red2 != c_red:
        raise ValidationError("reduced patch and reduced filters disagree on channels")
    if side != k + 2 * halo:
        raise ValidationError(f"patch side {side} does not match K + 2g = {k + 2 * halo}")
    p = (k - 1) // 2
    dy0, dy1, dx0, dx1 = valid_box if valid_box is not None else (0, k, 0, k)
    block = np.zeros((c_out, k, k), dtype=np.float32)
    n = (dy1 - dy0) * (dx1 - dx0)
    if n <= 0:
        return block, 0
    win = np.lib.stride_tricks.sliding_window_view(reduced_patch, (k, k), axis=(1, 2))
    off = halo - p
    cols = win[:, off + dy0 : off + dy1, off + dx0 : off + dx1]
    cols = cols.transpose(1, 2, 0, 3, 4).reshape(n, c_red * k * k)
    out = cols @ reduced_filters.reshape(c_out, c_red * k * k).T
    block[:, dy0:dy1, dx0:dx1] = out.T.reshape(c_out, dy1 - dy0, dx1 - dx0).astype(np.float32)
    return block, n


@dataclass
class HasteStats:
    """Per-application census of the operator.

    Arrays are indexed by patch (row-major grid order). mean_r / mean_m are
    unweighted means over patches, the statistics the cost model's averaged
    mode consumes.
    """

    r_per_patch: np.ndarray
    m_per_patch: np.ndarray
    reduced_per_patch: np.ndarray
    valid_per_patch: np.ndarray
    kernel: int = 0
    halo: int = 0

    @property
    def patch_count(self) -> int:
        return self.r_per_patch.size

    @property
    def mean_r(self) -> float:
        return float(self.r_per_patch.mean())

    @property
    def mean_m(self) -> float:
        return float(self.m_per_patch.mean())


def _group_patches(
    flats: np.ndarray, cfg: HasteConfig, planes: HyperplaneSet
) -> tuple[np.ndarray, np.ndarray]:
    """Bucket every patch's channels in one shot.

    flats is (patches, C, d) float64. Returns (orders, newgrp): orders lists
    channel indices bucket by bucket per patch (codes ascending, channels
    ascending inside a bucket, matching assign_buckets); newgrp flags the
    first member of each bucket. Random selection keeps each patch's LSH
    bucket sizes but permutes membership, matching assign_random.
    """
    n_patches, c_in, _ = flats.shape
    if cfg.center_mode == "vector":
        centered = flats - flats.mean(axis=1, keepdims=True)
    else:
        centered = flats - flats.mean(axis=2, keepdims=True)
    codes = hash_batch(centered.reshape(n_patches * c_in, -1), planes).reshape(n_patches, c_in)
    orders = np.argsort(codes, axis=1, kind="stable").astype(np.int64)
    sorted_codes = np.take_along_axis(codes, orders, axis=1)
    newgrp = np.empty((n_patches, c_in), dtype=bool)
    newgrp[:, 0] = True
    newgrp[:, 1:] = sorted_codes[:, 1:] != sorted_codes[:, :-1]

    if cfg.selection_mode == "random":
        for pi in range(n_patches):
            starts_p = np.flatnonzero(newgrp[pi])
            sizes_p = np.diff(np.append(starts_p, c_in))
            asg = assign_random(c_in, sizes_p, rng.derive_seed(cfg.random_seed, pi))
            orders[pi] = asg.order
            newgrp[pi] = False
            newgrp[pi, asg.starts] = True
    return orders, newgrp


def _forward_common(
    fmap: FeatureMap,
    filters: FilterBank,
    cfg: HasteConfig,
    planes: HyperplaneSet,
    padding: PaddingSpec | None,
) -> tuple[FeatureMap, HasteStats, flops.FlopsLedger]:
    k, g = filters.kernel, cfg.halo
    c_in, c_out = filters.in_channels, filters.out_channels
    h, w = fmap.height, fmap.width
    if padding is None:
        padding = PaddingSpec.same(k)
    if padding.top + padding.bottom != k - 1 or padding.left + padding.right != k - 1:
        raise ConfigurationError("convolution padding must preserve the spatial size")
    grid2 = rasterize(fmap, k, g, padding)
    side = grid2.side
    d = side * side
    n_patches = grid2.patch_count

    flats = grid2.slabs.reshape(n_patches, c_in, d)
    f64 = filters.data.astype(np.float64).reshape(c_out, c_in, k * k)

    orders, newgrp = _group_patches(flats, cfg, planes)

    # one global reduceat per tensor: bucket boundaries never cross patches
    # because every patch's first channel starts a bucket
    reduced_counts = newgrp.sum(axis=1).astype(np.int64)
    offsets = np.concatenate(([0], np.cumsum(reduced_counts))).astype(np.int64)
    group_starts = np.flatnonzero(newgrp.reshape(-1)).astype(np.int64)
    group_sizes = np.diff(np.append(group_starts, n_patches * c_in)).astype(np.int64)
    patch_of_group = group_starts // c_in
    merged_counts = np.bincount(
        patch_of_group[group_sizes >= 2], minlength=n_patches
    ).astype(np.int64)

    ordered_rows = np.take_along_axis(flats, orders[:, :, None], axis=1).reshape(-1, d)
    merged_rows = np.add.reduceat(ordered_rows, group_starts, axis=0) / group_sizes[:, None]
    ordered_filters = f64[:, orders.reshape(-1), :]
    merged_filters_all = np.add.reduceat(ordered_filters, group_starts, axis=1)

    out = np.zeros((c_out, h, w), dtype=np.float32)
    p = (k - 1) // 2
    valid_counts = np.empty(n_patches, dtype=np.int64)

    pi = 0
    for iy in range(grid2.ny):
        for ix in range(grid2.nx):
            merged_in = merged_rows[offsets[pi] : offsets[pi + 1]].reshape(-1, side, side)
            merged_f = merged_filters_all[:, offsets[pi] : offsets[pi + 1]].reshape(
                c_out, -1, k, k
            )
            box = grid2.valid_box(iy, ix)
            block, n_valid = reduced_conv(merged_in, merged_f, g, box)
            dy0, dy1, dx0, dx1 = box
            if n_valid:
                oy, ox = iy * k - p, ix * k - p
                out[:, oy + dy0 : oy + dy1, ox + dx0 : ox + dx1] = block[:, dy0:dy1, dx0:dx1]
            valid_counts[pi] = n_valid
            pi += 1

    dropped = int(n_patches * c_in - reduced_counts.sum())
    measured = flops.ComponentTally(
        centering=n_patches * ((c_in - 1) + 1 + c_in) * d,
        hashing=n_patches * c_in * planes.nonzero_entries,
        merge_fms=d * dropped + d * int(merged_counts.sum()),
        merge_filters=k * k * c_out * dropped,
        reduced_conv=int(2 * k * k * c_out * (reduced_counts * valid_counts).sum()),
    )

    stats = HasteStats(
        r_per_patch=1.0 - reduced_counts / c_in,
        m_per_patch=merged_counts,
        reduced_per_patch=reduced_counts,
        valid_per_patch=valid_counts,
        kernel=k,
        halo=g,
    )
    analytic = flops.exact_components(
        c_in, c_out, k, g, planes.nonzero_entries,
        reduced_counts, merged_counts, valid_counts,
    )
    ledger = flops.FlopsLedger(
        mode="exact",
        centering=analytic.centering,
        hashing=analytic.hashing,
        merge_fms=analytic.merge_fms,
        merge_filters=analytic.merge_filters,
        reduced_conv=analytic.reduced_conv,
        regular_baseline=mac_count_regular(c_in, c_out, h, w, k),
        measured=measured,
        mean_r=stats.mean_r,
        mean_m=stats.mean_m,
        patch_count=n_patches,
    )
    return FeatureMap(out), stats, ledger


def haste_forward(
    fmap: FeatureMap,
    filters: FilterBank,
    cfg: HasteConfig,
    planes: HyperplaneSet,
    padding: PaddingSpec | None = None,
) -> tuple[FeatureMap, HasteStats, flops.FlopsLedger]:
    """Apply the hashed merging convolution. Output matches conv2d_direct's shape.

    planes must be generated for (or at least agree with) cfg.hash; their
    dimension must be (K+2g)^2, or 9 for pointwise kernels (which dispatch to
    the 1x1 path). The filter bank is read-only throughout.
    """
    if fmap.channels != filters.in_channels:
        raise ValidationError(
            f"channel mismatch: map has {fmap.channels}, filters expect {filters.in_channels}"
        )
    want = cfg.expected_dim(filters.kernel)
    if cfg.hash.dim != want:
        raise ConfigurationError(
            f"hash dim {cfg.hash.dim} does not match required {want} for K={filters.kernel}, g={cfg.halo}"
        )
    if planes.dim != want or planes.bits != cfg.hash.bits:
        raise ConfigurationError("hyperplane set does not match the hash configuration")
    if filters.kernel == 1:
        return haste_forward_1x1(fmap, filters, cfg, planes)
    return _forward_common(fmap, filters, cfg, planes, padding)


def haste_forward_1x1(
    fmap: FeatureMap,
    filters: FilterBank,
    cfg: HasteConfig,
    planes: HyperplaneSet,
) -> tuple[FeatureMap, HasteStats, flops.FlopsLedger]:
    """Pointwise variant: side-3 non-overlapping patches, 9-dim hashes.

    The input is zero-padded on the right/bottom to a multiple of 3; outputs
    over the padded region are cropped. Every in-range position of a patch is
    a valid 1x1 kernel position, so a patch emits up to 9 output pixels.
    """
    if filters.kernel != 1:
        raise ConfigurationError("haste_forward_1x1 requires 1x1 filters")
    if fmap.channels != filters.in_channels:
        raise ValidationError("channel mismatch between map and filters")
    if cfg.halo != 1 or cfg.hash.dim != 9 or planes.dim != 9 or planes.bits != cfg.hash.bits:
        raise ConfigurationError("1x1 path requires halo 1 and 9-dimensional hashes")

    c_in, c_out = filters.in_channels, filters.out_channels
    h, w = fmap.height, fmap.width
    ny, nx = math.ceil(h / 3), math.ceil(w / 3)
    grid = np.zeros((c_in, ny * 3, nx * 3), dtype=np.float64)
    grid[:, :h, :w] = fmap.data
    f64 = filters.data.astype(np.float64).reshape(c_out, c_in)

    out = np.zeros((c_out, h, w), dtype=np.float32)
    n_patches = ny * nx
    reduced_counts = np.empty(n_patches, dtype=np.int64)
    merged_counts = np.empty(n_patches, dtype=np.int64)
    valid_counts = np.empty(n_patches, dtype=np.int64)
    measured = flops.ComponentTally()
    nnz = planes.nonzero_entries

    pi = 0
    for iy in range(ny):
        for ix in range(nx):
            slab = grid[:, iy * 3 : iy * 3 + 3, ix * 3 : ix * 3 + 3]
            flat = slab.reshape(c_in, 9)
            if cfg.center_mode == "vector":
                centered = flat - flat.mean(axis=0)
            else:
                centered = flat - flat.mean(axis=1, keepdims=True)
            measured.centering += ((c_in - 1) + 1 + c_in) * 9
            assignment = assign_buckets(centered, planes)
            measured.hashing += c_in * nnz
            if cfg.selection_mode == "random":
                assignment = assign_random(
                    c_in, assignment.counts, rng.derive_seed(cfg.random_seed, pi)
                )

            sums = np.add.reduceat(flat[assignment.order], assignment.starts, axis=0)
            merged_in = sums / assignment.counts[:, None]
            merged_f = np.add.reduceat(f64[:, assignment.order], assignment.starts, axis=1)
            n_red = assignment.reduced_channels
            n_merged = assignment.merged_buckets
            measured.merge_fms += 9 * (c_in - n_red) + 9 * n_merged
            measured.merge_filters += c_out * (c_in - n_red)

            rows = min(3, h - iy * 3)
            cols = min(3, w - ix * 3)
            n_valid = rows * cols
            if n_valid:
                pix = merged_in.reshape(n_red, 3, 3)[:, :rows, :cols].reshape(n_red, n_valid)
                block = merged_f @ pix
                measured.reduced_conv += 2 * n_red * c_out * n_valid
                out[:, iy * 3 : iy * 3 + rows, ix * 3 : ix * 3 + cols] = block.reshape(
                    c_out, rows, cols
                ).astype(np.float32)

            reduced_counts[pi] = n_red
            merged_counts[pi] = n_merged
            valid_counts[pi] = n_valid
            pi += 1

    stats = HasteStats(
        r_per_patch=1.0 - reduced_counts / c_in,
        m_per_patch=merged_counts,
        reduced_per_patch=reduced_counts,
        valid_per_patch=valid_counts,
        kernel=1,
        halo=1,
    )
    analytic = flops.exact_components(
        c_in, c_out, 1, 1, planes.nonzero_entries,
        reduced_counts, merged_counts, valid_counts,
    )
    ledger = flops.FlopsLedger(
        mode="exact",
        centering=analytic.centering,
        hashing=analytic.hashing,
        merge_fms=analytic.merge_fms,
        merge_filters=analytic.merge_filters,
        reduced_conv=analytic.reduced_conv,
        regular_baseline=mac_count_regular(c_in, c_out, h, w, 1),
        measured=measured,
        mean_r=stats.mean_r,
        mean_m=stats.mean_m,
        patch_count=n_patches,
    )
    return FeatureMap(out), stats, ledger
