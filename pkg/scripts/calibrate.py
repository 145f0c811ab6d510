"""Re-derive the CPU baseline cost model and compare it with the frozen defaults.

Usage: python3 scripts/calibrate.py [--config FILE] [--write FILE]
"""
import argparse
import dataclasses
import sys

from pidram_sim.bench import calibrate
from pidram_sim.config import CostModel, SimConfig, dump_config, load_config


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", help="YAML config to calibrate (default: built-in)")
    ap.add_argument("--write", help="write the calibrated config to this YAML file")
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else SimConfig()
    cost = calibrate(cfg)
    for k, v in dataclasses.asdict(cost).items():
        print(f"{k}: {v}")
    frozen = CostModel()
    print("matches frozen defaults:", cost == frozen)
    if args.write:
        dump_config(cfg.replace(cost=cost), args.write)
        print(f"wrote {args.write}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
