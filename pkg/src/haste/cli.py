"""Command-line front end.

Commands:
    info     inspect a model or dataset container
    run      evaluate baseline/hashed/random inference, write a report
    sweep    run over a list of L values, write a trade-off table
    compare  per-layer output deltas between the dense and hashed paths

Exit codes: 0 success, 1 usage error, 2 input-format error (unreadable or
corrupt container), 3 validation error (inconsistent graph, dataset, or
configuration). Output files are written atomically (temp file + rename).
CSV output uses a header row, ',' separators, '.' decimals and LF endings.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile

import numpy as np

from .errors import ConfigurationError, FormatError, ValidationError
from .runner import (
    EvalConfig,
    ModelGraph,
    compare_outputs,
    evaluate,
    layer_baseline_flops,
    load_dataset,
    load_model,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse, but usage problems raise instead of exiting with code 2."""

    def error(self, message):
        raise UsageError(message)


def _read_file(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".haste-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(text: str, out: str | None) -> None:
    if out:
        _write_atomic(out, text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _parse_seeds(raw: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(part) for part in raw.split(",") if part.strip() != "")
    except ValueError as exc:
        raise UsageError(f"bad seed list {raw!r}") from exc
    if not seeds:
        raise UsageError("seed list is empty")
    return seeds


def _parse_bit_list(raw: str) -> list[int]:
    try:
        values = [int(part) for part in raw.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"bad L list {raw!r}") from exc
    if not values:
        raise UsageError("L list is empty")
    if any(b >= a for a, b in zip(values[1:], values)):
        raise UsageError("L list must be strictly ascending")
    return values


def _eval_config(args, bits: int | None = None) -> EvalConfig:
    return EvalConfig(
        mode=args.mode,
        bits=bits if bits is not None else args.bits,
        sparsity=args.sparsity,
        halo=args.halo,
        seeds=_parse_seeds(args.seeds),
        start_layer=args.start_layer,
    )


def _add_eval_flags(sub, mode_default: str) -> None:
    sub.add_argument("--model", required=True, help="model container path")
    sub.add_argument("--data", required=True, help="dataset container path")
    sub.add_argument("--mode", default=mode_default, choices=("baseline", "haste", "random"))
    sub.add_argument("--sparsity", type=float, default=0.5, help="hyperplane zero fraction s")
    sub.add_argument("--halo", type=int, default=1, help="patch overlap g")
    sub.add_argument("--seeds", default="0,1,2", help="comma-separated seed list")
    sub.add_argument("--start-layer", type=int, default=0, dest="start_layer",
                     help="first convolution (counting convs) to swap")
    sub.add_argument("--out", default=None, help="output path (default: stdout)")


def build_parser() -> _Parser:
    parser = _Parser(prog="haste", description="Hashing-driven channel-merging convolution toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    p_info = subs.add_parser("info", help="summarize a container")
    p_info.add_argument("--model", default=None, help="model container path")
    p_info.add_argument("--data", default=None, help="dataset container path")
    p_info.add_argument("--format", default="text", choices=("text", "json"))
    p_info.add_argument("--out", default=None)

    p_run = subs.add_parser("run", help="evaluate and write a report")
    _add_eval_flags(p_run, "haste")
    p_run.add_argument("-L", "--bits", type=int, default=16, dest="bits", help="hash bits L")
    p_run.add_argument("--format", default="json", choices=("json", "csv"))

    p_sweep = subs.add_parser("sweep", help="trade-off table across L values")
    _add_eval_flags(p_sweep, "haste")
    p_sweep.add_argument("-L", "--bits", default="8,12,16,20", dest="bits",
                         help="comma-separated ascending L list")
    p_sweep.add_argument("--format", default="csv", choices=("csv", "json"))

    p_cmp = subs.add_parser("compare", help="dense vs hashed per-layer deltas")
    _add_eval_flags(p_cmp, "haste")
    p_cmp.add_argument("-L", "--bits", type=int, default=16, dest="bits", help="hash bits L")
    p_cmp.add_argument("--limit", type=int, default=4, help="number of images to compare")
    p_cmp.add_argument("--format", default="text", choices=("text", "json"))
    return parser


def _load_graph(path: str) -> ModelGraph:
    return load_model(_read_file(path))


def _json_text(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=False) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_info(args) -> int:
    if not args.model and not args.data:
        raise UsageError("info needs --model and/or --data")
    payload = {}
    lines = []
    if args.model:
        graph = _load_graph(args.model)
        rows = []
        params = 0
        for i, layer in enumerate(graph.layers):
            in_shape, out_shape = graph.shapes[i]
            shapes = {n: list(t.shape) for n, t in layer.weights.items()}
            params += sum(int(t.size) for t in layer.weights.values())
            rows.append(
                {
                    "index": i,
                    "kind": layer.kind,
                    "output_shape": list(out_shape),
                    "tensors": shapes,
                    "baseline_flops": layer_baseline_flops(layer, in_shape, out_shape),
                }
            )
        payload["model"] = {
            "input_shape": list(graph.input_shape),
            "parameters": params,
            "baseline_flops_per_image": sum(r["baseline_flops"] for r in rows),
            "layers": rows,
        }
        lines.append(f"model: input {graph.input_shape}, {params} parameters")
        lines.append(f"{'idx':>4} {'kind':<15} {'output':<18} {'FLOPs':>12}  tensors")
        for r in rows:
            shapes = ", ".join(f"{n}{tuple(s)}" for n, s in r["tensors"].items())
            lines.append(
                f"{r['index']:>4} {r['kind']:<15} {str(tuple(r['output_shape'])):<18}"
                f" {r['baseline_flops']:>12}  {shapes}"
            )
        lines.append(f"baseline FLOPs per image: {payload['model']['baseline_flops_per_image']}")
    if args.data:
        images, labels, manifest = load_dataset(_read_file(args.data))
        classes = sorted(int(v) for v in np.unique(labels))
        payload["dataset"] = {
            "images": list(images.shape),
            "labels": list(labels.shape),
            "classes": classes,
        }
        lines.append(
            f"dataset: {images.shape[0]} images {tuple(images.shape[1:])},"
            f" {len(classes)} classes"
        )
    text = _json_text(payload) if args.format == "json" else "\n".join(lines) + "\n"
    _emit(text, args.out)
    return 0


def _report_csv(report_dict: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["index", "kind", "mean_r", "mean_m", "flops_analytic", "flops_measured", "reduction_pct"]
    )
    for row in report_dict["layers"]:
        writer.writerow(
            [
                row["index"],
                row["kind"],
                "" if row["mean_r"] is None else repr(row["mean_r"]),
                "" if row["mean_m"] is None else repr(row["mean_m"]),
                repr(row["flops_analytic"]),
                repr(row["flops_measured"]),
                repr(row["reduction_pct"]),
            ]
        )
    return buf.getvalue()


def cmd_run(args) -> int:
    graph = _load_graph(args.model)
    images, labels, _ = load_dataset(_read_file(args.data))
    report = evaluate(graph, images, labels, _eval_config(args))
    payload = report.to_dict()
    text = _json_text(payload) if args.format == "json" else _report_csv(payload)
    _emit(text, args.out)
    return 0


def _network_mean_r(report_dict: dict) -> float | None:
    values = [row["mean_r"] for row in report_dict["layers"] if row["mean_r"] is not None]
    if not values:
        return None
    return float(np.mean(values))


def cmd_sweep(args) -> int:
    bit_list = _parse_bit_list(args.bits)
    graph = _load_graph(args.model)
    images, labels, _ = load_dataset(_read_file(args.data))
    rows = []
    for bits in bit_list:
        report = evaluate(graph, images, labels, _eval_config(args, bits=bits)).to_dict()
        rows.append(
            {
                "L": bits,
                "accuracy_mean": report["network"]["accuracy_mean"],
                "accuracy_std": report["network"]["accuracy_std"],
                "flops_reduction_mean": report["network"]["flops_reduction_mean"],
                "mean_r": _network_mean_r(report),
            }
        )
    if args.format == "json":
        text = _json_text({"rows": rows})
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["L", "accuracy_mean", "accuracy_std", "flops_reduction_mean", "mean_r"])
        for r in rows:
            writer.writerow(
                [
                    r["L"],
                    repr(r["accuracy_mean"]),
                    repr(r["accuracy_std"]),
                    repr(r["flops_reduction_mean"]),
                    "" if r["mean_r"] is None else repr(r["mean_r"]),
                ]
            )
        text = buf.getvalue()
    _emit(text, args.out)
    return 0


def cmd_compare(args) -> int:
    graph = _load_graph(args.model)
    images, _, _ = load_dataset(_read_file(args.data))
    rows = compare_outputs(graph, images, _eval_config(args), args.limit)
    if args.format == "json":
        text = _json_text({"layers": rows})
    else:
        lines = [f"{'idx':>4} {'kind':<15} {'mean_r':>9} {'max_abs':>12} {'mean_abs':>12} {'max_rel':>12}"]
        for r in rows:
            mean_r = "-" if r["mean_r"] is None else f"{r['mean_r']:.4f}"
            lines.append(
                f"{r['index']:>4} {r['kind']:<15} {mean_r:>9}"
                f" {r['max_abs']:>12.3e} {r['mean_abs']:>12.3e} {r['max_rel']:>12.3e}"
            )
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return 0


_COMMANDS = {"info": cmd_info, "run": cmd_run, "sweep": cmd_sweep, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, ConfigurationError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
