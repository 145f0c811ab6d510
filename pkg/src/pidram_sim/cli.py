"""Command-line entry point: `pidram-sim <subcommand> [options]`."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import bench
from .config import ConfigError, SimConfig, load_config

KIB = 1024
DEFAULT_SIZES = [8 * KIB << i for i in range(7)]  # 8 KiB .. 512 KiB


def _size(text: str) -> int:
    t = text.strip().lower()
    mult = 1
    for suffix, m in (("kib", KIB), ("k", KIB), ("mib", KIB * KIB), ("m", KIB * KIB)):
        if t.endswith(suffix):
            t, mult = t[: -len(suffix)], m
            break
    try:
        value = int(t, 0) * mult
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("sizes must be positive")
    return value


def _sizes(text: str) -> list[int]:
    return [_size(s) for s in text.split(",") if s.strip()]


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pidram-sim", description="processing-using-DRAM stack simulator")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--trace", action="store_true", help="also write trace.csv")
    sub = p.add_subparsers(dest="command", required=True)

    for name in ("copy-bench", "init-bench"):
        s = sub.add_parser(name, parents=[common], help=f"{name.split('-')[0]} speedup vs CPU")
        s.add_argument("--sizes", type=_sizes, default=DEFAULT_SIZES,
                       help="comma-separated sizes, e.g. 8K,64K,512K")
        s.add_argument("--mode", choices=[*bench.MODES, "both"], default="both")

    s = sub.add_parser("trng-bench", parents=[common], help="rand_dram latency and throughput")
    s.add_argument("--bits", type=int, default=40_000)

    s = sub.add_parser("randomness", parents=[common], help="monobit and chi-square checks")
    s.add_argument("--bits", type=int, default=1_000_000)

    s = sub.add_parser("discover", parents=[common], help="infer subarray boundaries")
    s.add_argument("--strategy", choices=["binary", "random"], default="binary")
    s.add_argument("--trials", type=int, default=1, help="probes per boundary (majority vote)")

    sub.add_parser("trace-dump", parents=[common], help="command trace of a small mixed workload")
    sub.add_parser("calibrate", parents=[common], help="solve the CPU baseline cost model")
    return p


def _config(args) -> SimConfig:
    cfg = load_config(args.config) if args.config else SimConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _merge(reports) -> bench.BenchReport:
    out = bench.BenchReport()
    for r in reports:
        out.records += r.records
        out.warnings += r.warnings
        out.errors += r.errors
        out.traces.update(r.traces)
    return out


def run(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _config(args)
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    cmd = args.command
    if cmd in ("copy-bench", "init-bench"):
        fn = bench.run_copy_bench if cmd == "copy-bench" else bench.run_init_bench
        modes = bench.MODES if args.mode == "both" else (args.mode,)
        report = _merge(fn(cfg, args.sizes, m, trace=args.trace) for m in modes)
    elif cmd == "trng-bench":
        report = bench.run_trng_bench(cfg, args.bits, trace=args.trace)
    elif cmd == "randomness":
        report = bench.run_randomness(cfg, args.bits)
        if not all(r.passed for r in report.randomness):
            report.errors.append("randomness checks failed")
    elif cmd == "discover":
        _, report = bench.run_discovery(cfg, args.out, args.strategy, args.trials, trace=args.trace)
        if not all(d.exact and d.probes <= d.probe_bound for d in report.discovery):
            report.warnings.append("discovered map differs from the device layout or exceeded the probe bound")
    elif cmd == "trace-dump":
        _, report = bench.trace_demo(cfg)
    else:
        cost = bench.calibrate(cfg)
        report = bench.BenchReport(stats=dataclasses.asdict(cost))
    report.write(args.out)
    sys.stdout.write(report.to_text())
    return 1 if report.errors else 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
