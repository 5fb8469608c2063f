"""Trains and exports the committed toy fixture.

The dataset is 10 coarse shape classes: binary 4x4 templates upsampled to
32x32, randomly rolled by up to 3 pixels, with per-image gain/offset jitter
and pixelwise Gaussian noise. All three input channels are EXACTLY equal
(noise included), so the first convolution's channels always collide and
merge losslessly; together with the sparse post-ReLU activations this gives
the network a known compressible structure while the task stays non-trivial.

Training is deterministic given the seed (single thread, deterministic
algorithms, seeded shuffling). A small L1 penalty on the ReLU activations
encourages sparse feature maps, which is what the hashed convolution
compresses on deeper layers (all-zero channels inside a window hash
identically and merge exactly).

Probe logits are computed with a float64 copy of the trained model so the
inference runtime (float32 tensors, float64 accumulation) reproduces them
to ~1e-12; the recorded tolerance is 1e-4.
"""

from __future__ import annotations

import copy
from collections import OrderedDict

import numpy as np
import torch
from torch import nn

from .container import write_container
from .export import export_model

# 4x4 binary class templates; rows separated by '/'.
TEMPLATES = [
    "1111/1001/1001/1111",  # ring
    "0110/0110/0110/0110",  # vertical bar
    "0000/1111/1111/0000",  # horizontal bar
    "1000/1100/0110/0011",  # thick diagonal
    "0011/0110/1100/1000",  # thick anti-diagonal
    "1100/1100/0011/0011",  # two-by-two checker
    "0011/0011/1100/1100",  # mirrored checker
    "1111/1111/0000/0000",  # top half
    "1001/0110/0110/1001",  # corners and center
    "0110/1111/1111/0110",  # fat diamond
]

INPUT_SHAPE = (3, 32, 32)
NUM_CLASSES = 10

# probe/threshold constants recorded into the fixture manifest
PROBE_COUNT = 16
THRESHOLDS = {
    "bits": 16,
    "sparsity": 0.5,
    "min_reduction_pct": 10.0,
    "max_accuracy_drop_pp": 3.0,
    "exact_bits": 40,
}


def template_array(index: int) -> np.ndarray:
    rows = TEMPLATES[index].split("/")
    return np.array([[int(c) for c in row] for row in rows], dtype=np.float64)


def generate_dataset(count: int, seed: int, noise: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Balanced sample of upsampled, jittered, noisy templates.

    Returns images (count, 3, 32, 32) float32 with identical channels and
    labels (count,) int64. Classes cycle round-robin, order shuffled.
    """
    rng = np.random.default_rng(seed)
    ups = [np.kron(template_array(c), np.ones((8, 8))) for c in range(NUM_CLASSES)]
    images = np.empty((count, 3, 32, 32), dtype=np.float32)
    labels = np.empty(count, dtype=np.int64)
    order = rng.permutation(count)
    for slot, i in enumerate(order):
        c = int(i) % NUM_CLASSES
        base = ups[c]
        dy, dx = rng.integers(-3, 4, size=2)
        gain = rng.uniform(0.7, 1.3)
        offset = rng.uniform(-0.05, 0.05)
        plane = np.roll(base, (int(dy), int(dx)), axis=(0, 1)) * gain + offset
        plane = plane + rng.normal(0.0, noise, size=(32, 32))
        chan = plane.astype(np.float32)
        images[slot] = np.broadcast_to(chan, (3, 32, 32))
        labels[slot] = c
    return images, labels


def build_model() -> nn.Sequential:
    return nn.Sequential(
        OrderedDict(
            [
                ("conv1", nn.Conv2d(3, 8, 3, padding=1, bias=False)),
                ("bn1", nn.BatchNorm2d(8)),
                ("relu1", nn.ReLU()),
                ("pool1", nn.MaxPool2d(2, 2)),
                ("conv2", nn.Conv2d(8, 16, 3, padding=1, bias=False)),
                ("bn2", nn.BatchNorm2d(16)),
                ("relu2", nn.ReLU()),
                ("pool2", nn.MaxPool2d(2, 2)),
                ("conv3", nn.Conv2d(16, 32, 3, padding=1, bias=False)),
                ("bn3", nn.BatchNorm2d(32)),
                ("relu3", nn.ReLU()),
                ("gap", nn.AdaptiveAvgPool2d(1)),
                ("flat", nn.Flatten()),
                ("fc", nn.Linear(32, 10)),
            ]
        )
    )


def _deterministic(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


class _ActivationTap:
    """Collects ReLU outputs for the sparsity penalty."""

    def __init__(self, model: nn.Module):
        self.values: list[torch.Tensor] = []
        for mod in model.modules():
            if isinstance(mod, nn.ReLU):
                mod.register_forward_hook(self._hook)

    def _hook(self, mod, args, output):
        self.values.append(output)

    def drain(self) -> list[torch.Tensor]:
        out, self.values = self.values, []
        return out


def _tie_pairs(model: nn.Sequential) -> None:
    """Force exact duplicate filter pairs on conv1/conv2 (and their BN params).

    Output channel i and i + C/2 of conv1 and conv2 are averaged into the
    same value, so after every projection those feature maps are bitwise
    equal. This plants exact channel-level redundancy in the inputs of
    conv2 and conv3; the hashed convolution finds and merges it losslessly
    at any number of hash bits. conv3 and the classifier stay untied.
    """
    with torch.no_grad():
        for name in ("conv1", "conv2"):
            w = model.get_submodule(name).weight
            half = w.shape[0] // 2
            avg = (w[:half] + w[half:]) / 2
            w[:half] = avg
            w[half:] = avg
        for name in ("bn1", "bn2"):
            bn = model.get_submodule(name)
            for p in (bn.weight, bn.bias):
                half = p.shape[0] // 2
                avg = (p[:half] + p[half:]) / 2
                p[:half] = avg
                p[half:] = avg


def train_model(
    model: nn.Sequential,
    images: np.ndarray,
    labels: np.ndarray,
    seed: int,
    epochs: int = 16,
    batch: int = 64,
    lr: float = 5e-3,
    activation_l1: float = 1e-2,
    tie_filters: bool = True,
) -> None:
    """In-place deterministic training.

    The activation L1 term drives feature maps toward exact zeros (dead
    windows hash identically and merge losslessly); the filter tying keeps
    conv1/conv2 output-channel pairs bitwise equal (projection after every
    step, so every forward pass sees tied weights and the BN running stats
    of tied channels stay equal for free).
    """
    _deterministic(seed)
    x = torch.from_numpy(images)
    y = torch.from_numpy(labels)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    tap = _ActivationTap(model)
    gen = torch.Generator().manual_seed(seed)
    if tie_filters:
        _tie_pairs(model)
    model.train()
    n = x.shape[0]
    for _ in range(epochs):
        perm = torch.randperm(n, generator=gen)
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            opt.zero_grad()
            logits = model(x[idx])
            acts = tap.drain()
            loss = loss_fn(logits, y[idx])
            if activation_l1 > 0:
                loss = loss + activation_l1 * sum(a.mean() for a in acts)
            loss.backward()
            opt.step()
            if tie_filters:
                _tie_pairs(model)
    model.eval()
    tap.drain()


def logits_f64(model: nn.Sequential, images: np.ndarray) -> np.ndarray:
    """Float64 forward of the trained model (reference semantics)."""
    mdl = copy.deepcopy(model).double().eval()
    with torch.no_grad():
        out = mdl(torch.from_numpy(images).double())
    return out.numpy()


def model_accuracy(model: nn.Sequential, images: np.ndarray, labels: np.ndarray) -> float:
    logits = logits_f64(model, images)
    return float((logits.argmax(axis=1) == labels).mean())


def make_fixture(
    seed: int,
    train_count: int = 3000,
    test_count: int = 1000,
    epochs: int = 16,
    noise: float = 0.25,
) -> dict:
    """Train the toy net and build both fixture containers.

    Returns {"model": bytes, "dataset": bytes, "baseline_accuracy": float}.
    Deterministic given the arguments: the same seed yields byte-identical
    containers.
    """
    train_x, train_y = generate_dataset(train_count, seed, noise)
    test_x, test_y = generate_dataset(test_count, seed + 1, noise)
    probe_x, probe_y = generate_dataset(PROBE_COUNT, seed + 2, noise)

    _deterministic(seed)
    model = build_model()
    train_model(model, train_x, train_y, seed, epochs=epochs)

    baseline = model_accuracy(model, test_x, test_y)
    probe_logits = logits_f64(model, probe_x).astype(np.float32)

    fixture_manifest = {
        "fixture": {
            "baseline_accuracy": baseline,
            "thresholds": dict(THRESHOLDS),
            "probe": {
                "images": "fixture.probe_images",
                "logits": "fixture.probe_logits",
                "labels": "fixture.probe_labels",
            },
        }
    }
    extra_tensors = {
        "fixture.probe_images": probe_x,
        "fixture.probe_logits": probe_logits,
        "fixture.probe_labels": probe_y,
    }
    model_blob = export_model(model, INPUT_SHAPE, fixture_manifest, extra_tensors)
    dataset_blob = write_container(
        {"container": "dataset", "dataset": {"num_samples": test_count}},
        {"images": test_x, "labels": test_y},
    )
    return {"model": model_blob, "dataset": dataset_blob, "baseline_accuracy": baseline}
