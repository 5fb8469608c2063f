"""Exporter command line.

    haste-export export --in weights.pt --arch arch.yaml --out model.hste
    haste-export make-fixture --seed 0 --out-dir fixtures/

The arch YAML lists layers in order; supported types: conv2d (in, out,
kernel, bias, stride optional), batchnorm (features), relu, maxpool2,
global_avgpool, flatten, linear (in, out, bias). The weights file is a torch
state_dict whose keys use the YAML layer names. Unsupported settings (for
example a strided conv) fail with an error naming the layer.
"""

from __future__ import annotations

import argparse
import os
import sys
from collections import OrderedDict

import torch
import yaml
from torch import nn

from .export import ExportError, export_model
from .fixture import make_fixture


def build_from_yaml(spec: dict) -> tuple[nn.Sequential, tuple[int, int, int]]:
    if "input_shape" not in spec or "layers" not in spec:
        raise ExportError("arch file needs input_shape and layers")
    input_shape = tuple(int(v) for v in spec["input_shape"])
    mods: list[tuple[str, nn.Module]] = []
    for i, rec in enumerate(spec["layers"]):
        name = str(rec.get("name", f"layer{i}"))
        kind = rec.get("type")
        if kind == "conv2d":
            k = int(rec.get("kernel", 3))
            mods.append(
                (
                    name,
                    nn.Conv2d(
                        int(rec["in"]),
                        int(rec["out"]),
                        k,
                        stride=int(rec.get("stride", 1)),
                        padding=(k - 1) // 2,
                        bias=bool(rec.get("bias", False)),
                    ),
                )
            )
        elif kind == "batchnorm":
            mods.append((name, nn.BatchNorm2d(int(rec["features"]))))
        elif kind == "relu":
            mods.append((name, nn.ReLU()))
        elif kind == "maxpool2":
            mods.append((name, nn.MaxPool2d(2, 2)))
        elif kind == "global_avgpool":
            mods.append((name, nn.AdaptiveAvgPool2d(1)))
        elif kind == "flatten":
            mods.append((name, nn.Flatten()))
        elif kind == "linear":
            mods.append((name, nn.Linear(int(rec["in"]), int(rec["out"]), bias=bool(rec.get("bias", True)))))
        else:
            raise ExportError(f"layer {name!r}: unknown type {kind!r}")
    return nn.Sequential(OrderedDict(mods)), input_shape


def cmd_export(args) -> int:
    with open(args.arch, "r") as fh:
        spec = yaml.safe_load(fh)
    model, input_shape = build_from_yaml(spec)
    state = torch.load(args.infile, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    blob = export_model(model, input_shape)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    print(f"wrote {args.out} ({len(blob)} bytes)")
    return 0


def cmd_make_fixture(args) -> int:
    result = make_fixture(args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    model_path = os.path.join(args.out_dir, "toy_model.hste")
    data_path = os.path.join(args.out_dir, "toy_test.hste")
    with open(model_path, "wb") as fh:
        fh.write(result["model"])
    with open(data_path, "wb") as fh:
        fh.write(result["dataset"])
    print(f"wrote {model_path} and {data_path}")
    print(f"baseline accuracy: {result['baseline_accuracy']:.4f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="haste-export")
    subs = parser.add_subparsers(dest="command", required=True)

    p_exp = subs.add_parser("export", help="convert a torch state_dict to a container")
    p_exp.add_argument("--in", dest="infile", required=True, help="state_dict .pt file")
    p_exp.add_argument("--arch", required=True, help="architecture YAML")
    p_exp.add_argument("--out", required=True, help="output container path")

    p_fix = subs.add_parser("make-fixture", help="train and export the toy fixture")
    p_fix.add_argument("--seed", type=int, default=0)
    p_fix.add_argument("--out-dir", default="fixtures")

    args = parser.parse_args(argv)
    try:
        if args.command == "export":
            return cmd_export(args)
        return cmd_make_fixture(args)
    except ExportError as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
