"""TRNG throughput as the D-RaNGe access period varies.

Usage: python3 scripts/trng_period_sweep.py [--bits N]
"""
import argparse
import dataclasses
import sys

from pidram_sim.bench import run_trng_bench
from pidram_sim.config import SimConfig

PERIODS_NS = [241.0, 482.0, 964.0, 1928.0]


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--bits", type=int, default=20_000)
    args = ap.parse_args()
    base = SimConfig()
    print(f"{'period ns':>10} {'latency ns':>11} {'Mb/s':>8}")
    for p in PERIODS_NS:
        cfg = base.replace(cost=dataclasses.replace(base.cost, drange_period_ns=p))
        t = run_trng_bench(cfg, args.bits).trng[0]
        print(f"{p:>10.1f} {t.latency_per_4bit_ns:>11.1f} {t.throughput_mbps:>8.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
