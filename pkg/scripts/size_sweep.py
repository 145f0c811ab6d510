"""Copy and init speedups over 8 KiB..512 KiB in both coherence modes, as a table.

Usage: python3 scripts/size_sweep.py [--config FILE] [--csv FILE]
"""
import argparse
import csv
import sys

from pidram_sim.bench import MODES, run_copy_bench, run_init_bench
from pidram_sim.config import SimConfig, load_config

SIZES = [8192 << i for i in range(7)]


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--csv", help="also write the rows as CSV")
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else SimConfig()
    rows = []
    for fn in (run_copy_bench, run_init_bench):
        for mode in MODES:
            rows += fn(cfg, SIZES, mode).records
    print(f"{'op':<5} {'mode':<9} {'KiB':>5} {'pim ns':>11} {'cpu ns':>12} {'speedup':>8}")
    for r in rows:
        print(f"{r.operation:<5} {r.mode:<9} {r.size_bytes // 1024:>5} {r.pim_ns:>11.1f} "
              f"{r.baseline_ns:>12.1f} {r.speedup:>8.2f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["operation", "mode", "size_bytes", "pim_ns", "baseline_ns", "speedup"])
            for r in rows:
                w.writerow([r.operation, r.mode, r.size_bytes, r.pim_ns, r.baseline_ns, r.speedup])
    return 0


if __name__ == "__main__":
    sys.exit(main())
