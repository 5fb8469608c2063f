"""Torch module walker: maps supported layers onto the runtime's layer kinds.

Supported torch modules: Conv2d (stride 1, dilation 1, groups 1, square odd
kernel, symmetric size-preserving zero padding), BatchNorm2d, ReLU,
MaxPool2d(2, 2), AdaptiveAvgPool2d(1), Flatten, Linear, Identity (skipped).
Anything else, or a supported module with unsupported settings, raises
ExportError naming the layer. A Flatten directly after the global average
pool is dropped: the runtime's global_avgpool already emits a vector.
"""

from __future__ import annotations

import importlib.resources
import json
import struct

import jsonschema
import numpy as np
import torch
from torch import nn

from .container import write_container


class ExportError(Exception):
    pass


def _np32(tensor: torch.Tensor) -> np.ndarray:
    return tensor.detach().cpu().to(torch.float32).numpy().copy()


def module_layers(model) -> list[tuple[str, dict, dict]]:
    """Flatten a model into (name, layer record, tensors) triples.

    model is an nn.Module whose immediate children are the layer sequence
    (nn.Sequential works), or an iterable of (name, module) pairs.
    """
    if isinstance(model, nn.Module):
        pairs = list(model.named_children())
        if not pairs:
            raise ExportError("model has no child modules to export")
    else:
        pairs = [(str(n), m) for n, m in model]

    out = []
    for name, mod in pairs:
        if isinstance(mod, nn.Identity):
            continue
        if isinstance(mod, nn.Conv2d):
            out.append((name, *_conv_record(name, mod)))
        elif isinstance(mod, nn.BatchNorm2d):
            out.append((name, *_bn_record(name, mod)))
        elif isinstance(mod, nn.ReLU):
            out.append((name, {"kind": "relu", "params": {}}, {}))
        elif isinstance(mod, nn.MaxPool2d):
            if _pair(mod.kernel_size) != (2, 2) or _pair(mod.stride) != (2, 2) or _pair(mod.padding) != (0, 0):
                raise ExportError(f"layer {name!r} (MaxPool2d): only kernel 2, stride 2, no padding")
            out.append((name, {"kind": "maxpool2", "params": {}}, {}))
        elif isinstance(mod, nn.AdaptiveAvgPool2d):
            if _pair(mod.output_size) != (1, 1):
                raise ExportError(f"layer {name!r} (AdaptiveAvgPool2d): only output size 1")
            out.append((name, {"kind": "global_avgpool", "params": {}}, {}))
        elif isinstance(mod, nn.Flatten):
            if out and out[-1][1]["kind"] == "global_avgpool":
                continue
            out.append((name, {"kind": "flatten", "params": {}}, {}))
        elif isinstance(mod, nn.Linear):
            tensors = {"weight": _np32(mod.weight)}
            params = {"has_bias": mod.bias is not None}
            if mod.bias is not None:
                tensors["bias"] = _np32(mod.bias)
            out.append((name, {"kind": "linear", "params": params}, tensors))
        else:
            raise ExportError(f"layer {name!r} ({type(mod).__name__}): unsupported module")
    return out


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return (int(v[0]), int(v[1]))
    return (int(v), int(v))


def _bn_record(name: str, mod: nn.BatchNorm2d):
    if not mod.track_running_stats or mod.running_mean is None:
        raise ExportError(f"layer {name!r} (BatchNorm2d): needs tracked running statistics")
    if not mod.affine:
        raise ExportError(f"layer {name!r} (BatchNorm2d): needs affine parameters")
    tensors = {
        "scale": _np32(mod.weight),
        "shift": _np32(mod.bias),
        "mean": _np32(mod.running_mean),
        "var": _np32(mod.running_var),
    }
    return {"kind": "batchnorm", "params": {"epsilon": float(mod.eps)}}, tensors


def _conv_record(name: str, mod: nn.Conv2d):
    if _pair(mod.stride) != (1, 1):
        raise ExportError(f"layer {name!r} (Conv2d): stride {tuple(mod.stride)} unsupported, only 1")
    if _pair(mod.dilation) != (1, 1) or mod.groups != 1:
        raise ExportError(f"layer {name!r} (Conv2d): dilation/groups unsupported")
    kh, kw = _pair(mod.kernel_size)
    if kh != kw or kh % 2 == 0:
        raise ExportError(f"layer {name!r} (Conv2d): kernel {kh}x{kw} must be square and odd")
    if mod.padding_mode != "zeros":
        raise ExportError(f"layer {name!r} (Conv2d): padding mode {mod.padding_mode!r} unsupported")
    ph, pw = _pair(mod.padding)
    if (ph, pw) != ((kh - 1) // 2, (kw - 1) // 2):
        raise ExportError(f"layer {name!r} (Conv2d): padding must preserve the spatial size")
    params = {
        "has_bias": mod.bias is not None,
        "pad": [ph, ph, pw, pw],
        "stride": 1,
        "haste_eligible": True,
    }
    tensors = {"weight": _np32(mod.weight)}
    if mod.bias is not None:
        tensors["bias"] = _np32(mod.bias)
    return {"kind": "conv", "params": params}, tensors


def load_schema() -> dict:
    text = importlib.resources.files("haste_exporter").joinpath("manifest.schema.json").read_text()
    return json.loads(text)


def validate_manifest(manifest: dict) -> None:
    jsonschema.validate(manifest, load_schema())


def export_model(
    model,
    input_shape: tuple[int, int, int],
    extra_manifest: dict | None = None,
    extra_tensors: dict[str, np.ndarray] | None = None,
) -> bytes:
    """Serialize a supported torch model into model-container bytes."""
    layers = []
    tensors: dict[str, np.ndarray] = {}
    for i, (name, record, weights) in enumerate(module_layers(model)):
        names = {}
        for tname, arr in weights.items():
            key = f"layer{i}.{tname}"
            tensors[key] = arr
            names[tname] = key
        layers.append({**record, "tensors": names})
    for name, arr in (extra_tensors or {}).items():
        if name in tensors:
            raise ExportError(f"extra tensor {name!r} collides with a layer tensor")
        tensors[name] = arr
    manifest = {
        "container": "model",
        "model": {"input_shape": [int(v) for v in input_shape], "layers": layers},
        "source": {
            "framework": f"torch {torch.__version__}",
            "exporter": "haste-exporter 0.1.0",
        },
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    blob = write_container(manifest, tensors)
    # validate what was actually written (including the tensor records)
    mlen = struct.unpack("<Q", blob[8:16])[0]
    validate_manifest(json.loads(blob[16 : 16 + mlen].decode("utf-8")))
    return blob
