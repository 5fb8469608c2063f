"""Miniature inference runtime over the container format.

Supported layer kinds: conv (stride 1, size-preserving), batchnorm, relu,
maxpool2 (2x2, stride 2, floor), global_avgpool, linear, residual_begin,
residual_add, flatten. Activations travel as float32; every reduction inside
a layer accumulates in float64 and rounds once on the way out. BatchNorm is
executed as its own elementwise layer, never folded into convolutions, and
the hashed convolution therefore always sees pre-normalization inputs.

Per-layer baseline FLOPs (used for reduction reporting): conv
2*H*W*K^2*C_in*C_out (bias excluded on both the dense and hashed paths, it
is identical there); linear 2*in*out plus out if biased; batchnorm 2*C*H*W;
global_avgpool C*H*W; residual_add C*H*W; relu, maxpool2, flatten and
residual_begin are comparisons/copies and count zero.

Evaluation honors the HASTE_THREADS environment variable: 0 or unset picks
the machine's core count, 1 forces sequential execution, larger values cap a
process pool. All aggregation is integer-based, so results are bit-identical
for every worker count and dataset order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .container import read_container, write_container
from .errors import ConfigurationError, ValidationError
from .flops import FlopsLedger
from .lsh import HashConfig, HyperplaneSet, generate_hyperplanes
from .op import HasteConfig, haste_forward
from .tensors import FeatureMap, FilterBank, PaddingSpec, conv2d_direct, mac_count_regular

LAYER_KINDS = (
    "conv",
    "batchnorm",
    "relu",
    "maxpool2",
    "global_avgpool",
    "linear",
    "residual_begin",
    "residual_add",
    "flatten",
)

RUN_MODES = ("baseline", "haste", "random")


@dataclass
class LayerSpec:
    """One layer: kind, scalar params, named weight tensors."""

    kind: str
    params: dict
    weights: dict[str, np.ndarray] = field(default_factory=dict)
    haste: HasteConfig | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValidationError(f"unknown layer kind {self.kind!r}")


class ModelGraph:
    """An ordered layer list plus the manifest it was loaded from."""

    def __init__(self, input_shape, layers, manifest=None, extras=None):
        self.input_shape = tuple(int(v) for v in input_shape)
        self.layers = list(layers)
        self.manifest = manifest or {}
        self.extras = extras or {}
        self.shapes = self._validate()

    def conv_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.kind == "conv"]

    def _validate(self):
        """Propagate shapes through the graph; raises ValidationError."""
        if len(self.input_shape) != 3:
            raise ValidationError("input_shape must be (C, H, W)")
        shape = self.input_shape
        stack = []
        shapes = []
        for i, layer in enumerate(self.layers):
            where = f"layer {i} ({layer.kind})"
            k, p, w = layer.kind, layer.params, layer.weights
            if k in ("conv", "batchnorm", "relu", "maxpool2", "global_avgpool", "residual_begin", "residual_add", "flatten"):
                if len(shape) != 3:
                    raise ValidationError(f"{where}: needs a (C, H, W) input, got {shape}")
            in_shape = shape
            if k == "conv":
                if p.get("stride", 1) != 1:
                    raise ValidationError(f"{where}: stride {p['stride']} is unsupported (only 1)")
                weight = w.get("weight")
                if weight is None or weight.ndim != 4:
                    raise ValidationError(f"{where}: missing 4-d weight tensor")
                c_out, c_in, kk, kk2 = weight.shape
                if kk != kk2 or kk % 2 == 0:
                    raise ValidationError(f"{where}: kernels must be square and odd")
                if c_in != shape[0]:
                    raise ValidationError(f"{where}: expects {c_in} input channels, got {shape[0]}")
                pad = tuple(p.get("pad", _same_pad(kk)))
                if pad[0] + pad[1] != kk - 1 or pad[2] + pad[3] != kk - 1:
                    raise ValidationError(f"{where}: padding must preserve the spatial size")
                if p.get("has_bias") and ("bias" not in w or w["bias"].shape != (c_out,)):
                    raise ValidationError(f"{where}: bias tensor missing or misshaped")
                shape = (c_out, shape[1], shape[2])
            elif k == "batchnorm":
                c = shape[0]
                for name in ("scale", "shift", "mean", "var"):
                    if name not in w or w[name].shape != (c,):
                        raise ValidationError(f"{where}: tensor {name} missing or not ({c},)")
                if p.get("epsilon", 1e-5) <= 0:
                    raise ValidationError(f"{where}: epsilon must be positive")
            elif k == "maxpool2":
                if shape[1] < 2 or shape[2] < 2:
                    raise ValidationError(f"{where}: input {shape} too small to pool")
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            elif k == "global_avgpool":
                shape = (shape[0],)
            elif k == "flatten":
                shape = (shape[0] * shape[1] * shape[2],)
            elif k == "linear":
                weight = w.get("weight")
                if weight is None or weight.ndim != 2:
                    raise ValidationError(f"{where}: missing 2-d weight tensor")
                out_f, in_f = weight.shape
                if len(shape) != 1 or shape[0] != in_f:
                    raise ValidationError(f"{where}: expects a ({in_f},) vector, got {shape}")
                if p.get("has_bias") and ("bias" not in w or w["bias"].shape != (out_f,)):
                    raise ValidationError(f"{where}: bias tensor missing or misshaped")
                shape = (out_f,)
            elif k == "residual_begin":
                stack.append(shape)
            elif k == "residual_add":
                if not stack:
                    raise ValidationError(f"{where}: residual_add without residual_begin")
                saved = stack.pop()
                if saved != shape:
                    raise ValidationError(f"{where}: branch shapes differ, {saved} vs {shape}")
            shapes.append((in_shape, shape))
        if stack:
            raise ValidationError("residual_begin without matching residual_add")
        return shapes


def _same_pad(kernel: int) -> tuple[int, int, int, int]:
    p = (kernel - 1) // 2
    return (p, p, p, p)


def layer_baseline_flops(layer: LayerSpec, in_shape, out_shape) -> int:
    """Dense cost of one layer under the package FLOP conventions."""
    k = layer.kind
    if k == "conv":
        c_out, c_in, kk, _ = layer.weights["weight"].shape
        return mac_count_regular(c_in, c_out, in_shape[1], in_shape[2], kk)
    if k == "linear":
        out_f, in_f = layer.weights["weight"].shape
        return 2 * in_f * out_f + (out_f if layer.params.get("has_bias") else 0)
    if k == "batchnorm":
        c, h, w = in_shape
        return 2 * c * h * w
    if k == "global_avgpool":
        c, h, w = in_shape
        return c * h * w
    if k == "residual_add":
        c, h, w = in_shape
        return c * h * w
    return 0


# ---------------------------------------------------------------------------
# container <-> graph


def _layers_to_manifest(graph: ModelGraph):
    layers = []
    tensors: dict[str, np.ndarray] = {}
    for i, layer in enumerate(graph.layers):
        names = {}
        for tname, arr in layer.weights.items():
            key = f"layer{i}.{tname}"
            tensors[key] = arr
            names[tname] = key
        layers.append({"kind": layer.kind, "params": layer.params, "tensors": names})
    return layers, tensors


def save_model(graph: ModelGraph, meta: dict | None = None) -> bytes:
    """Serialize a graph (and any extras) into model container bytes."""
    layers, tensors = _layers_to_manifest(graph)
    for name, arr in graph.extras.items():
        tensors[name] = arr
    manifest = {
        "container": "model",
        "model": {"input_shape": list(graph.input_shape), "layers": layers},
    }
    if meta:
        manifest.update(meta)
    return write_container(manifest, tensors)


def load_model(data: bytes) -> ModelGraph:
    """Parse and validate a model container."""
    manifest, tensors = read_container(data)
    if manifest.get("container") != "model":
        raise ValidationError("container does not hold a model")
    model = manifest.get("model")
    if not isinstance(model, dict) or "input_shape" not in model or "layers" not in model:
        raise ValidationError("model manifest lacks input_shape or layers")
    used = set()
    layers = []
    for i, rec in enumerate(model["layers"]):
        kind = rec.get("kind")
        if kind not in LAYER_KINDS:
            raise ValidationError(f"layer {i}: unknown kind {kind!r}")
        weights = {}
        for tname, key in rec.get("tensors", {}).items():
            if key not in tensors:
                raise ValidationError(f"layer {i}: tensor {key!r} not present in container")
            weights[tname] = tensors[key]
            used.add(key)
        layers.append(LayerSpec(kind, dict(rec.get("params", {})), weights))
    extras = {k: v for k, v in tensors.items() if k not in used}
    return ModelGraph(model["input_shape"], layers, manifest, extras)


def save_dataset(images: np.ndarray, labels: np.ndarray, meta: dict | None = None) -> bytes:
    """Serialize an (N, C, H, W) float32 image tensor and int64 labels."""
    images = np.ascontiguousarray(images, dtype=np.float32)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if images.ndim != 4 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise ValidationError("dataset needs images (N, C, H, W) and labels (N,)")
    manifest = {
        "container": "dataset",
        "dataset": {"num_samples": int(labels.shape[0])},
    }
    if meta:
        manifest.update(meta)
    return write_container(manifest, {"images": images, "labels": labels})


def load_dataset(data: bytes) -> tuple[np.ndarray, np.ndarray, dict]:
    """Parse a dataset container into (images, labels, manifest)."""
    manifest, tensors = read_container(data)
    if manifest.get("container") != "dataset":
        raise ValidationError("container does not hold a dataset")
    if "images" not in tensors or "labels" not in tensors:
        raise ValidationError("dataset container must carry 'images' and 'labels'")
    images, labels = tensors["images"], tensors["labels"]
    if images.ndim != 4 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise ValidationError("dataset tensors have inconsistent shapes")
    if images.dtype != np.float32 or labels.dtype != np.int64:
        raise ValidationError("dataset tensors have wrong dtypes")
    return images, labels, manifest


# ---------------------------------------------------------------------------
# swapping and execution


def swap_haste(graph: ModelGraph, start_layer: int, cfg: HasteConfig) -> list[int]:
    """Mark eligible convolutions at conv position >= start_layer as hashed.

    start_layer counts convolution modules (0-based), not raw layer rows.
    Returns the graph-layer indices that were swapped. cfg.hash.dim must be
    consistent with each swapped conv's kernel and cfg.halo; cfg.hash.seed is
    a placeholder replaced per (evaluation seed, conv position) at run time.
    """
    if start_layer < 0:
        raise ConfigurationError("start_layer must be non-negative")
    swapped = []
    for pos, li in enumerate(graph.conv_indices()):
        layer = graph.layers[li]
        if pos < start_layer or not layer.params.get("haste_eligible", True):
            layer.haste = None
            continue
        kernel = layer.weights["weight"].shape[2]
        want = cfg.expected_dim(kernel)
        if cfg.hash.dim != want:
            raise ConfigurationError(
                f"hash dim {cfg.hash.dim} does not fit conv {pos} (kernel {kernel}, halo {cfg.halo})"
            )
        layer.haste = cfg
        swapped.append(li)
    return swapped


@dataclass
class LayerTally:
    """Integer accumulators for one layer across images (one seed)."""

    kind: str
    baseline: int = 0
    analytic: int = 0
    measured: int = 0
    reduced_sum: int = 0
    m_sum: int = 0
    patches: int = 0
    channels: int = 0
    swapped: bool = False

    def absorb(self, other: "LayerTally") -> None:
        self.baseline += other.baseline
        self.analytic += other.analytic
        self.measured += other.measured
        self.reduced_sum += other.reduced_sum
        self.m_sum += other.m_sum
        self.patches += other.patches

    @property
    def mean_r(self) -> float | None:
        if not self.swapped or self.patches == 0:
            return None
        return 1.0 - self.reduced_sum / (self.channels * self.patches)

    @property
    def mean_m(self) -> float | None:
        if not self.swapped or self.patches == 0:
            return None
        return self.m_sum / self.patches


def _run_layers(
    graph: ModelGraph,
    image: np.ndarray,
    plan: dict,
    tallies: list[LayerTally] | None,
    image_index: int = 0,
    record: list | None = None,
):
    """Forward one image; plan maps layer index -> _SwapEntry.

    When record is a list it receives every layer's output activation in
    order (the compare command's probe point).
    """
    x = image
    stack: list[np.ndarray] = []
    for i, layer in enumerate(graph.layers):
        k = layer.kind
        in_shape, _ = graph.shapes[i]
        if tallies is not None:
            t = tallies[i]
            base = layer_baseline_flops(layer, in_shape, graph.shapes[i][1])
            t.baseline += base
        if k == "conv":
            fmap = FeatureMap(x)
            weight = layer.weights["weight"]
            bank = FilterBank(weight)
            padding = PaddingSpec(*layer.params.get("pad", _same_pad(bank.kernel)))
            if i in plan:
                entry = plan[i]
                cfg = entry.config_for_image(image_index)
                planes = HyperplaneSet(entry.planes)
                out, stats, ledger = haste_forward(fmap, bank, cfg, planes, padding)
                x = out.data
                if tallies is not None:
                    t.analytic += ledger.total
                    t.measured += ledger.measured.total
                    t.reduced_sum += int(stats.reduced_per_patch.sum())
                    t.m_sum += int(stats.m_per_patch.sum())
                    t.patches += stats.patch_count
                    t.channels = bank.in_channels
                    t.swapped = True
            else:
                x = conv2d_direct(fmap, bank, padding).data
                if tallies is not None:
                    t.analytic += base
                    t.measured += base
            if layer.params.get("has_bias"):
                x = (x.astype(np.float64) + layer.weights["bias"].astype(np.float64)[:, None, None]).astype(np.float32)
        elif k == "batchnorm":
            w = layer.weights
            eps = layer.params.get("epsilon", 1e-5)
            a = w["scale"].astype(np.float64) / np.sqrt(w["var"].astype(np.float64) + eps)
            b = w["shift"].astype(np.float64) - w["mean"].astype(np.float64) * a
            x = (x.astype(np.float64) * a[:, None, None] + b[:, None, None]).astype(np.float32)
            if tallies is not None:
                t.analytic += base
                t.measured += base
        elif k == "relu":
            x = np.maximum(x, np.float32(0.0))
        elif k == "maxpool2":
            c, h, w = x.shape
            x = x[:, : h // 2 * 2, : w // 2 * 2].reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))
        elif k == "global_avgpool":
            x = x.astype(np.float64).mean(axis=(1, 2)).astype(np.float32)
            if tallies is not None:
                t.analytic += base
                t.measured += base
        elif k == "flatten":
            x = x.reshape(-1)
        elif k == "linear":
            w64 = layer.weights["weight"].astype(np.float64)
            acc = w64 @ x.astype(np.float64)
            if layer.params.get("has_bias"):
                acc = acc + layer.weights["bias"].astype(np.float64)
            x = acc.astype(np.float32)
            if tallies is not None:
                t.analytic += base
                t.measured += base
        elif k == "residual_begin":
            stack.append(x)
        elif k == "residual_add":
            x = (x.astype(np.float64) + stack.pop().astype(np.float64)).astype(np.float32)
            if tallies is not None:
                t.analytic += base
                t.measured += base
        else:  # pragma: no cover
            raise ValidationError(f"unhandled layer kind {k}")
        if record is not None:
            record.append(x)
    return x


def predict_logits(
    graph: ModelGraph, image: np.ndarray, plan: dict | None = None, image_index: int = 0
) -> np.ndarray:
    """Logits of one (C, H, W) float32 image."""
    return _run_layers(
        graph, np.ascontiguousarray(image, dtype=np.float32), plan or {}, None, image_index
    )


def _fresh_tallies(graph: ModelGraph) -> list[LayerTally]:
    return [LayerTally(kind=l.kind) for l in graph.layers]


def _eval_chunk(args):
    graph, plan, images, labels, offset = args
    tallies = _fresh_tallies(graph)
    correct = 0
    for j, (img, lab) in enumerate(zip(images, labels)):
        logits = _run_layers(graph, img, plan, tallies, offset + j)
        if int(np.argmax(logits)) == int(lab):
            correct += 1
    return correct, tallies


def _workers_from_env() -> int:
    raw = os.environ.get("HASTE_THREADS", "").strip() or "0"
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"HASTE_THREADS must be an integer, got {raw!r}") from exc
    if value < 0:
        raise ConfigurationError("HASTE_THREADS must be >= 0")
    return value or (os.cpu_count() or 1)


@dataclass(frozen=True)
class EvalConfig:
    """Network evaluation settings (the CLI's run parameters)."""

    mode: str = "baseline"
    bits: int = 16
    sparsity: float = 0.5
    halo: int = 1
    seeds: tuple[int, ...] = (0, 1, 2)
    start_layer: int = 0
    center_mode: str = "vector"

    def __post_init__(self):
        if self.mode not in RUN_MODES:
            raise ConfigurationError(f"mode must be one of {RUN_MODES}")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")


@dataclass
class EvalReport:
    """Aggregated evaluation results across seeds."""

    meta: dict
    layer_rows: list[dict]
    accuracy_per_seed: list[float]
    reduction_per_seed: list[float]

    @property
    def accuracy_mean(self) -> float:
        return float(np.mean(self.accuracy_per_seed))

    @property
    def accuracy_std(self) -> float:
        return float(np.std(self.accuracy_per_seed))

    @property
    def reduction_mean(self) -> float:
        return float(np.mean(self.reduction_per_seed))

    @property
    def reduction_std(self) -> float:
        return float(np.std(self.reduction_per_seed))

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "layers": self.layer_rows,
            "network": {
                "accuracy_per_seed": self.accuracy_per_seed,
                "accuracy_mean": self.accuracy_mean,
                "accuracy_std": self.accuracy_std,
                "flops_reduction_mean": self.reduction_mean,
                "flops_reduction_std": self.reduction_std,
            },
        }


@dataclass(frozen=True)
class _SwapEntry:
    """One swapped conv under one evaluation seed.

    Hyperplanes depend on (seed, conv position); in random selection mode
    the bucket permutation additionally depends on the image index, so the
    config is specialized per image.
    """

    base: HasteConfig
    planes: np.ndarray
    conv_pos: int
    eval_seed: int

    def config_for_image(self, image_index: int) -> HasteConfig:
        if self.base.selection_mode != "random":
            return self.base
        return replace(
            self.base,
            random_seed=rng.derive_seed(self.eval_seed, self.conv_pos, image_index),
        )


def _seed_plan(graph: ModelGraph, seed: int) -> dict[int, _SwapEntry]:
    """Per-layer hash planes and selection seeds for one evaluation seed."""
    plan = {}
    for pos, li in enumerate(graph.conv_indices()):
        layer = graph.layers[li]
        if layer.haste is None:
            continue
        base = layer.haste
        hash_cfg = HashConfig(
            base.hash.bits, base.hash.sparsity, base.hash.dim, rng.derive_seed(seed, pos)
        )
        cfg = replace(base, hash=hash_cfg)
        plan[li] = _SwapEntry(cfg, generate_hyperplanes(hash_cfg).planes, pos, seed)
    return plan


def evaluate(graph: ModelGraph, images: np.ndarray, labels: np.ndarray, cfg: EvalConfig) -> EvalReport:
    """Evaluate top-1 accuracy and the FLOPs ledger over a dataset.

    Results are independent of image order and worker count; the seed only
    influences hyperplane generation (and bucket permutations in random
    mode). Baseline mode is seed-free: it is evaluated once and its row is
    replicated across the configured seeds.
    """
    images = np.ascontiguousarray(images, dtype=np.float32)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if images.ndim != 4 or images.shape[0] != labels.shape[0]:
        raise ValidationError("evaluate needs images (N, C, H, W) with matching labels")
    if tuple(images.shape[1:]) != graph.input_shape:
        raise ValidationError(
            f"dataset images {tuple(images.shape[1:])} do not match model input {graph.input_shape}"
        )
    n = images.shape[0]
    if n == 0:
        raise ValidationError("dataset is empty")

    prepare(graph, cfg)
    seeds = list(cfg.seeds)
    run_seeds = [0] if cfg.mode == "baseline" else seeds
    per_seed = []
    workers = _workers_from_env()
    for seed in run_seeds:
        plan = {} if cfg.mode == "baseline" else _seed_plan(graph, seed)
        chunks = _split_chunks(n, workers)
        if len(chunks) <= 1:
            results = [_eval_chunk((graph, plan, images, labels, 0))]
        else:
            with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
                futures = [
                    pool.submit(_eval_chunk, (graph, plan, images[a:b], labels[a:b], a))
                    for a, b in chunks
                ]
                results = [f.result() for f in futures]
        correct = sum(r[0] for r in results)
        tallies = results[0][1]
        for _, other in results[1:]:
            for t, o in zip(tallies, other):
                t.swapped = t.swapped or o.swapped
                t.channels = max(t.channels, o.channels)
                t.absorb(o)
        per_seed.append((correct / n, tallies))

    if cfg.mode == "baseline":
        per_seed = per_seed * len(seeds)

    layer_rows = []
    for i, layer in enumerate(graph.layers):
        base = per_seed[0][1][i].baseline
        analytic = float(np.mean([s[1][i].analytic for s in per_seed]))
        measured = float(np.mean([s[1][i].measured for s in per_seed]))
        r_vals = [s[1][i].mean_r for s in per_seed]
        m_vals = [s[1][i].mean_m for s in per_seed]
        swapped = per_seed[0][1][i].swapped
        layer_rows.append(
            {
                "index": i,
                "kind": layer.kind,
                "mean_r": float(np.mean(r_vals)) if swapped else None,
                "mean_m": float(np.mean(m_vals)) if swapped else None,
                "flops_analytic": analytic,
                "flops_measured": measured,
                "reduction_pct": 100.0 * (1.0 - analytic / base) if base > 0 else 0.0,
            }
        )

    reductions = []
    accuracies = []
    for acc, tallies in per_seed:
        total = sum(t.analytic for t in tallies)
        base_total = sum(t.baseline for t in tallies)
        reductions.append(100.0 * (1.0 - total / base_total))
        accuracies.append(acc)

    meta = {
        "mode": cfg.mode,
        "L": cfg.bits,
        "s": cfg.sparsity,
        "g": cfg.halo,
        "seeds": seeds,
        "start_layer": cfg.start_layer,
    }
    return EvalReport(meta, layer_rows, accuracies, reductions)


def compare_outputs(graph: ModelGraph, images: np.ndarray, cfg: EvalConfig, limit: int) -> list[dict]:
    """Per-layer output deltas between the dense and hashed paths.

    Runs the first `limit` images through both paths under cfg's first seed
    and reports, per layer, the compression ratio plus max/mean absolute and
    max relative deltas (relative to the layer's largest dense magnitude).
    """
    if limit < 1:
        raise ConfigurationError("compare needs at least one image")
    images = np.ascontiguousarray(images, dtype=np.float32)
    prepare(graph, cfg)
    seed = cfg.seeds[0]
    plan = {} if cfg.mode == "baseline" else _seed_plan(graph, seed)
    n = min(limit, images.shape[0])
    k = len(graph.layers)
    tallies = _fresh_tallies(graph)
    max_abs = np.zeros(k)
    sum_abs = np.zeros(k)
    counts = np.zeros(k)
    ref = np.zeros(k)
    for idx in range(n):
        rec_dense: list = []
        rec_haste: list = []
        _run_layers(graph, images[idx], {}, None, idx, rec_dense)
        _run_layers(graph, images[idx], plan, tallies, idx, rec_haste)
        for li, (a, b) in enumerate(zip(rec_dense, rec_haste)):
            delta = np.abs(a.astype(np.float64) - b.astype(np.float64))
            max_abs[li] = max(max_abs[li], float(delta.max()))
            sum_abs[li] += float(delta.sum())
            counts[li] += delta.size
            ref[li] = max(ref[li], float(np.abs(a).max()))
    rows = []
    for li, layer in enumerate(graph.layers):
        scale = ref[li] if ref[li] > 0 else 1.0
        rows.append(
            {
                "index": li,
                "kind": layer.kind,
                "mean_r": tallies[li].mean_r,
                "max_abs": float(max_abs[li]),
                "mean_abs": float(sum_abs[li] / counts[li]) if counts[li] else 0.0,
                "max_rel": float(max_abs[li] / scale),
            }
        )
    return rows


def _split_chunks(n: int, workers: int) -> list[tuple[int, int]]:
    """Contiguous chunk bounds; sequential when one worker or a tiny batch."""
    if workers <= 1 or n < 64:
        return [(0, n)]
    k = min(workers, math.ceil(n / 32))
    step = math.ceil(n / k)
    return [(a, min(a + step, n)) for a in range(0, n, step)]


def prepare(graph: ModelGraph, cfg: EvalConfig) -> list[int]:
    """Apply cfg's swap plan to the graph; returns swapped layer indices.

    Unlike swap_haste this builds one operator config per conv, sizing the
    hash dimension to that conv's kernel (mixed kernel sizes are fine).
    """
    for layer in graph.layers:
        layer.haste = None
    if cfg.mode == "baseline":
        return []
    if cfg.start_layer < 0:
        raise ConfigurationError("start_layer must be non-negative")
    swapped = []
    for pos, li in enumerate(graph.conv_indices()):
        layer = graph.layers[li]
        if pos < cfg.start_layer or not layer.params.get("haste_eligible", True):
            layer.haste = None
            continue
        kernel = layer.weights["weight"].shape[2]
        halo = cfg.halo if kernel >= 3 else 1
        dim = 9 if kernel == 1 else (kernel + 2 * halo) ** 2
        hcfg = HasteConfig(
            hash=HashConfig(cfg.bits, cfg.sparsity, dim, 0),
            halo=halo,
            selection_mode="random" if cfg.mode == "random" else "lsh",
            center_mode=cfg.center_mode,
        )
        layer.haste = hcfg
        swapped.append(li)
    return swapped
