"""Command-line front end: convert, run, bench, and report subcommands.

Exit codes: 0 success, 1 I/O failure, 2 validation failure, 3 protocol
invariant violation under --strict. Log level comes from the SIA_LOG
environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics, model_io, synth
from .config import SiaConfig
from .convert import ConversionError, convert_network
from .engine import DimensionError, run_network
from .memory import CapacityError, ProtocolViolation
from .neurons import NeuronMode
from .pe import SUPPORTED_KERNEL_SIZES

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_PROTOCOL = 3


def _setup_logging() -> None:
    level = os.environ.get("SIA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _build_config(args) -> SiaConfig:
    mode = NeuronMode(args.mode, args.leak_shift) if args.mode else NeuronMode()
    return SiaConfig(
        clock_hz=args.clock,
        mode=mode,
        transfer_model=not args.no_transfer_model,
        overlap_aggregation=getattr(args, "overlap", False),
        strict=getattr(args, "strict", False),
    )


def _out_dir(args) -> Path:
    out = Path(args.out_dir or "sia_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_convert(args) -> int:
    layers, scales, meta = model_io.load_ann(args.ann)
    input_scale = args.input_scale if args.input_scale is not None else meta["input_scale"]
    mode = NeuronMode(args.mode or "IF", args.leak_shift)
    net = convert_network(
        layers,
        scales,
        timesteps=args.T,
        input_scale=input_scale,
        mode=mode,
        frac_g=args.frac_g,
        frac_h=args.frac_h,
    )
    model_io.save_network(args.out, net, timesteps=args.T, input_scale=input_scale)
    print(f"wrote {model_io.manifest_path(args.out)} and {model_io.weights_path(args.out)}")
    print("layer,kind,theta,weight_saturation_pct")
    for layer in net:
        theta = layer.theta if layer.is_compute else ""
        sat = f"{100 * layer.weight_saturation:.2f}" if layer.is_compute else ""
        print(f"{layer.name},{layer.kind},{theta},{sat}")
    return EXIT_OK


def cmd_run(args) -> int:
    net, meta = model_io.load_network(args.net)
    frames = model_io.read_spikes(args.spikes)
    if args.T is not None:
        if args.T < 1 or args.T > len(frames):
            raise DimensionError(
                f"--T {args.T} outside the spike file's 1..{len(frames)} timesteps"
            )
        frames = frames[: args.T]
    if args.mode:
        mode = NeuronMode(args.mode, args.leak_shift)
        net = [replace(layer, mode=mode) if layer.is_compute else layer for layer in net]
    cfg = _build_config(args)
    report = run_network(net, frames, cfg)
    out = _out_dir(args)
    (out / "report.json").write_text(metrics.report_json(report))
    (out / "report.csv").write_text(metrics.report_csv(report))
    (out / "latency.csv").write_text(metrics.latency_csv(report))
    (out / "spike_rates.csv").write_text(metrics.spike_rate_csv(report))
    (out / "spike_rates.dat").write_text(metrics.spike_rate_dat(report))
    totals = report.to_dict()["totals"]
    print(f"timesteps: {report.timesteps}")
    print(f"total cycles: {totals['total_cycles']}")
    print(f"latency: {1e3 * totals['latency_s']:.3f} ms")
    print(f"effective GOPS: {totals['effective_gops']:.3f} of peak {totals['peak_gops']:.1f}")
    print(f"output spike counts: {report.output_spike_counts}")
    print(f"predicted class: {report.predicted_class}")
    print(f"reports under {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    ks = [int(x) for x in args.k.split(",")]
    for k in ks:
        if k not in SUPPORTED_KERNEL_SIZES:
            raise ValueError(
                f"kernel size {k} unsupported; reference sizes: {SUPPORTED_KERNEL_SIZES}"
            )
    cfg = _build_config(args)
    rng = np.random.default_rng(args.seed)
    rows = []
    for k in ks:
        layer = synth.bench_conv_layer(k, out_ch=args.out_ch, in_ch=args.in_ch, seed=args.seed)
        frames = synth.random_frames(rng, (args.in_ch, args.size, args.size), args.T)
        report = run_network([layer], frames, cfg)
        rows.append((k, report.total_cycles, 1e3 * report.latency_s))
    print("kernel,output_size,cycles,latency_ms")
    lines = ["kernel,output_size,cycles,latency_ms"]
    for k, cycles, ms in rows:
        line = f"{k}x{k},{args.size}x{args.size},{cycles},{ms:.4f}"
        print(line)
        lines.append(line)
    if args.out_dir:
        out = _out_dir(args)
        (out / "bench.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.run_report and not args.accuracy_net:
        raise ValueError("nothing to report: give a report.json or --accuracy-net")
    out = _out_dir(args)
    if args.run_report:
        data = json.loads(Path(args.run_report).read_text())
        clock = data["clock_hz"]
        rows = ["layer,output_size,cycles,compute_ms,transfer_ms,total_ms"]
        for s in data["per_layer"]:
            compute = s["pe_busy_cycles"] + s["aggregation_cycles"]
            dims = "x".join(str(d) for d in s["output_dims"])
            rows.append(
                f"{s['name']},{dims},{s['total_cycles']},{1e3 * compute / clock:.3f},"
                f"{1e3 * s['memory_stall_cycles'] / clock:.3f},"
                f"{1e3 * s['total_cycles'] / clock:.3f}"
            )
        (out / "latency.csv").write_text("\n".join(rows) + "\n")
        rates = ["layer,spike_rate"]
        rates += [f"{s['name']},{s['spike_rate']:.6f}" for s in data["per_layer"]]
        (out / "spike_rates.csv").write_text("\n".join(rates) + "\n")
        print(f"tables under {out}")
    if args.accuracy_net:
        if not args.accuracy_ann:
            raise ValueError("--accuracy-net needs --accuracy-ann for reference labels")
        net, meta = model_io.load_network(args.accuracy_net)
        layers, scales, _ = model_io.load_ann(args.accuracy_ann)
        t_values = [int(x) for x in args.T_values.split(",")]
        in_ch = next(l.weights_i8.shape[1] for l in net if l.kind == "conv")
        toy = synth.ToyModel(
            layers, scales, meta["input_scale"], (in_ch, args.size, args.size)
        )
        dataset = synth.make_margin_dataset(toy, seed=args.seed)
        cfg = _build_config(args)
        curve = metrics.accuracy_curve(net, dataset, t_values, cfg)
        (out / "accuracy.csv").write_text(metrics.accuracy_csv(curve))
        (out / "accuracy.dat").write_text(metrics.accuracy_dat(curve))
        for t, acc in curve:
            print(f"T={t}: accuracy {acc:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sia", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--clock", type=int, default=100_000_000, help="clock in Hz")
        p.add_argument("--mode", choices=["IF", "LIF"], default=None)
        p.add_argument("--leak-shift", dest="leak_shift", type=int, default=4)
        p.add_argument("--no-transfer-model", action="store_true")
        p.add_argument("--out-dir", default=None, help="report directory (default sia_out)")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("convert", help="convert a parameter bundle into a spiking network")
    p.add_argument("ann", help="base path of the .manifest.json/.weights.bin bundle")
    p.add_argument("-o", "--out", required=True, help="base path for the converted network")
    p.add_argument("--T", type=int, default=8, help="default encoding timesteps")
    p.add_argument(
        "--input-scale", dest="input_scale", type=float, default=None,
        help="real value of one input spike (default: the bundle's own)",
    )
    p.add_argument("--frac-g", dest="frac_g", type=int, default=8)
    p.add_argument("--frac-h", dest="frac_h", type=int, default=8)
    common(p)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("run", help="run a converted network on a spike input file")
    p.add_argument("net", help="base path of the converted network")
    p.add_argument("spikes", help="base path of the .spikes.bin input")
    p.add_argument("--T", type=int, default=None, help="use only the first T timesteps")
    p.add_argument("--strict", action="store_true", help="protocol violations become fatal")
    p.add_argument("--overlap", action="store_true", help="overlap aggregation with the PE array")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="kernel-size latency sweep on synthetic input")
    p.add_argument("--k", default="3,5,7,11", help="comma-separated kernel sizes")
    p.add_argument("--size", type=int, default=32, help="square input size")
    p.add_argument("--in-ch", dest="in_ch", type=int, default=3)
    p.add_argument("--out-ch", dest="out_ch", type=int, default=64)
    p.add_argument("--T", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="emit tables from a run report or an accuracy curve")
    p.add_argument("run_report", nargs="?", default=None, help="report.json from a run")
    p.add_argument("--accuracy-net", dest="accuracy_net", default=None)
    p.add_argument("--accuracy-ann", dest="accuracy_ann", default=None)
    p.add_argument("--T-values", dest="T_values", default="1,2,4,8")
    p.add_argument("--size", type=int, default=8)
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ProtocolViolation as exc:
        print(f"protocol violation: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (
        ConversionError,
        CapacityError,
        DimensionError,
        model_io.ModelIOError,
        ValueError,
    ) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
