"""Command-line interface: ``fp8ptq <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 non-finite value.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import __version__
from .errors import ContainerError, Fp8PtqError, NonFiniteError
from .fp8_core import decode, encode_nearest, get_format
from .quant import PER_CHANNEL, PER_TENSOR, CalibRange
from .runtime import graph as G
from .runtime.container import MAGIC, atomic_write, load_model, save_model
from .runtime.toys import DATASET_KINDS, OutlierSpec, accuracy, build_toy_encoder, make_dataset, train_toy_mlp
from .tensor import metrics

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

FORMAT_TOKENS = ("fp32", "int8", "e4m3", "e5m2")
CSV_HEADER = ["mode", "format", "granularity", "mse", "sqnr_db", "cosine", "max_abs_err", "accuracy"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _granularity(text: str) -> str:
    try:
        return {"per-channel": PER_CHANNEL, "per-tensor": PER_TENSOR}[text]
    except KeyError:
        raise argparse.ArgumentTypeError(f"expected per-channel or per-tensor, got {text!r}") from None


def _fmt_num(v):
    """Report number: shortest round-trip decimal, or an explicit marker."""
    if v is None:
        return "undefined"
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, float) and math.isnan(v):
        raise NonFiniteError("non-finite value in report")
    return v


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, indent=2, allow_nan=False) + "\n").encode("utf-8")


# -- subcommands -------------------------------------------------------------


def cmd_gen_data(args) -> int:
    ds = make_dataset(args.kind, args.n, args.seed, args.outlier_frac, args.outlier_mag, args.dim)
    save_model(ds, args.out)
    return 0


def cmd_train_toy(args) -> int:
    m = train_toy_mlp(load_model(args.data), args.epochs, args.lr, args.seed, args.hidden)
    save_model(m, args.out)
    print(f"train_accuracy={m.metadata['train_accuracy']} test_accuracy={m.metadata['test_accuracy']}")
    return 0


def cmd_build_encoder(args) -> int:
    spec = OutlierSpec(args.outlier_frac, args.outlier_mag)
    m = build_toy_encoder(args.seed, args.d_model, args.heads, args.ffn, args.seq_len, spec)
    save_model(m, args.out)
    return 0


def _calib_batches(path):
    return [load_model(path).tensors["x"]]


def cmd_calibrate(args) -> int:
    m = load_model(args.model)
    ranges = G.collect_ranges(m, _calib_batches(args.calib))
    record = {
        "kind": "calibration",
        "ranges": {k: ranges[k].to_record() for k in sorted(ranges, key=_hook_order)},
    }
    atomic_write(args.out, _dump_json(record))
    return 0


def _hook_order(key):
    idx, name = key.split(":", 1)
    return int(idx), name


def _load_ranges(path, model) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return G.collect_ranges(model, _calib_batches(path))
    try:
        with open(path, encoding="utf-8") as fh:
            record = json.load(fh)
        return {k: CalibRange.from_record(v) for k, v in record["ranges"].items()}
    except (ValueError, KeyError, TypeError) as exc:
        raise ContainerError(f"{path}: neither a container nor a calibration record ({exc})") from None


def cmd_quantize(args) -> int:
    if args.format == "fp32":
        raise UsageError("quantize needs an 8-bit --format (int8, e4m3 or e5m2)")
    m = load_model(args.model)
    ranges = _load_ranges(args.calib, m)
    q = G.attach_params(m, ranges, args.format, args.weights, args.quant_attn_internal)
    save_model(q, args.out)
    return 0


def _row(label, fmt, gran, ref, out, labels):
    met = metrics(ref, out)
    if not all(np.isfinite(out).ravel()):
        raise NonFiniteError(f"{fmt} run produced non-finite outputs")
    acc = accuracy(out, labels) if labels is not None else None
    return {
        "mode": label,
        "format": fmt,
        "granularity": gran,
        "metrics": {k: _fmt_num(v) for k, v in met.items()},
        "accuracy": _fmt_num(acc),
    }


def _provenance(args, model, data) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return {
        "seeds": {
            "model": model.metadata.get("seed", "undefined"),
            "data": data.metadata.get("seed", "undefined"),
        },
        "config": config,
        "tool_version": __version__,
    }


def _write_report(report: dict, path) -> None:
    atomic_write(path, _dump_json(report))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in report["runs"]:
        writer.writerow([r["mode"], r["format"], r["granularity"],
                         *(r["metrics"][k] for k in CSV_HEADER[3:7]), r["accuracy"]])
    atomic_write(_csv_path(path), buf.getvalue().encode("utf-8"))


def _csv_path(path: str) -> str:
    return path[:-5] + ".csv" if path.endswith(".json") else path + ".csv"


def _gran_label(g: str) -> str:
    return g.replace("_", "-")


def cmd_eval(args) -> int:
    m = load_model(args.model)
    data = load_model(args.data)
    x, y = data.tensors["x"], data.tensors.get("y")
    ref = G.run(m, x, G.FP32)
    runs = [_row("fp32", "fp32", "n/a", ref, ref, y)]
    target = m.metadata.get("quant.target")
    if target is not None:
        out = G.run(m, x, G.QUANT_SIM)
        runs.append(_row("quant_sim", target, _gran_label(m.metadata["quant.weights"]), ref, out, y))
    report = {"runs": runs, "provenance": _provenance(args, m, data)}
    if args.report:
        _write_report(report, args.report)
    else:
        sys.stdout.write(_dump_json(report).decode())
    return 0


def _parse_formats(values) -> list[str]:
    out = []
    for v in values or ["fp32,int8,e4m3"]:
        for tok in v.split(","):
            tok = tok.strip().lower()
            if tok not in FORMAT_TOKENS:
                raise UsageError(f"unknown format token {tok!r}; expected one of {FORMAT_TOKENS}")
            if tok not in out:
                out.append(tok)
    return out


def cmd_compare(args) -> int:
    formats = _parse_formats(args.format)
    m = load_model(args.model)
    data = load_model(args.data)
    x, y = data.tensors["x"], data.tensors.get("y")
    ref = G.run(m, x, G.FP32)
    runs = []
    ranges = None
    for fmt in formats:
        if fmt == "fp32":
            runs.append(_row("fp32", "fp32", "n/a", ref, ref, y))
            continue
        if ranges is None:
            if not args.calib:
                raise UsageError("--calib is required for quantized formats")
            ranges = _load_ranges(args.calib, m)
        q = G.attach_params(m, ranges, fmt, args.weights, args.quant_attn_internal)
        out = G.run(q, x, G.QUANT_SIM)
        runs.append(_row("quant_sim", fmt, _gran_label(args.weights), ref, out, y))
    report = {"runs": runs, "provenance": _provenance(args, m, data)}
    _write_report(report, args.report)
    for r in runs:
        print(f"{r['format']:>5}  cosine={r['metrics']['cosine']}  mse={r['metrics']['mse']}"
              f"  accuracy={r['accuracy']}")
    return 0


def cmd_cast(args) -> int:
    try:
        value = float(args.value)
    except ValueError:
        raise UsageError(f"cannot parse {args.value!r} as a decimal number") from None
    try:
        fmt = get_format(args.fmt)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    code = encode_nearest(value, fmt)
    print(f"0x{code:02X} {decode(code, fmt)!r}")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fp8ptq", description="FP8 / INT8 post-training quantization toolkit")
    p.add_argument("--version", action="version", version=f"fp8ptq {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def quant_flags(sp, calib_required=True):
        sp.add_argument("--model", required=True)
        sp.add_argument("--calib", required=calib_required,
                        help="dataset container or calibration record from `calibrate`")
        sp.add_argument("--weights", type=_granularity, default="per-channel",
                        choices=[PER_CHANNEL, PER_TENSOR], metavar="{per-channel,per-tensor}")
        sp.add_argument("--quant-attn-internal", type=_bool, default=True, metavar="BOOL")

    sp = sub.add_parser("gen-data", help="write a synthetic dataset container")
    sp.add_argument("--kind", choices=DATASET_KINDS, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--outlier-frac", type=float, default=0.001)
    sp.add_argument("--outlier-mag", type=float, default=50.0)
    sp.add_argument("--dim", type=int, default=None,
                    help="reshape gauss_outliers samples to rows of this width")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train-toy", help="train the toy MLP classifier")
    sp.add_argument("--data", required=True)
    sp.add_argument("--epochs", type=int, default=1000)
    sp.add_argument("--lr", type=float, default=0.5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--hidden", type=int, default=32)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_toy)

    sp = sub.add_parser("build-encoder", help="write a seeded outlier-injected encoder block")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--outlier-frac", type=float, default=0.001)
    sp.add_argument("--outlier-mag", type=float, default=50.0)
    sp.add_argument("--d-model", type=int, default=64)
    sp.add_argument("--heads", type=int, default=4)
    sp.add_argument("--ffn", type=int, default=256)
    sp.add_argument("--seq-len", type=int, default=32)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_build_encoder)

    sp = sub.add_parser("calibrate", help="record min/max ranges at every GEMM input")
    sp.add_argument("--model", required=True)
    sp.add_argument("--calib", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("quantize", help="attach static quantization params to a model")
    quant_flags(sp)
    sp.add_argument("--format", choices=FORMAT_TOKENS, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_quantize)

    sp = sub.add_parser("eval", help="evaluate a (quantized) model against its FP32 run")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", help="FP32 vs INT8 vs FP8 PTQ on one model")
    quant_flags(sp, calib_required=False)
    sp.add_argument("--data", required=True)
    sp.add_argument("--format", action="append",
                    help="repeatable or comma separated; default fp32,int8,e4m3")
    sp.add_argument("--report", required=True)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("cast", help="show the FP8 code and value for a decimal")
    sp.add_argument("value")
    sp.add_argument("fmt", metavar="format")
    sp.set_defaults(func=cmd_cast)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fp8ptq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        print(f"fp8ptq: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (Fp8PtqError, OSError, KeyError, ValueError) as exc:
        print(f"fp8ptq: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
