"""End-to-end acceptance criteria, each at its stated tolerance.

Every test prints one `ACCEPTANCE <n> <name>: PASS|FAIL (...)` line; the lines
are repeated in the pytest terminal summary.
"""
import dataclasses
import math
import time

import numpy as np

from pidram_sim import bench, cli
from pidram_sim.config import SimConfig
from pidram_sim.controller import MemKind, MemRequest
from pidram_sim.pimolib import BlockingMode
from pidram_sim.poc import Flag, PocRegister, check_flag_trace
from pidram_sim.randomness import run_randomness_tests
from pidram_sim.stack import build_stack
from pidram_sim.supervisor import Purpose, SubarrayMap

from conftest import ACCEPTANCE_LINES

KIB = 1024
SWEEP = [8 * KIB << k for k in range(7)]  # 8 KiB .. 512 KiB


def verdict(n: int, name: str, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {n} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def within(x: float, target: float, rel: float) -> bool:
    return abs(x - target) <= rel * target


def test_1_rowclone_correctness():
    t0 = time.perf_counter()
    s = build_stack(SimConfig(seed=11), trace=False, placement="random")
    g = s.config.geometry
    rng = np.random.default_rng(2024)
    ok = 0
    for _ in range(1000):
        a = s.supervisor.alloc_align(g.row_bytes, Purpose.OPERAND_PAIR)
        (src,), (dst,) = a.regions
        s.device.poke_row(a.bank, src, s.device.random_row(rng))
        s.device.poke_row(a.bank, dst, s.device.random_row(rng))
        s.lib.pim_copy(a.src, a.dst, BlockingMode.FINISH)
        ok += np.array_equal(s.device.peek_row(a.bank, dst), s.device.peek_row(a.bank, src))
        s.supervisor.free(a)
    elapsed = time.perf_counter() - t0
    verdict(1, "rowclone-correctness", ok == 1000 and elapsed < 60,
            f"{ok}/1000 exact, {elapsed:.1f} s")


def test_2_discovery_exactness():
    exact, worst = 0, 0
    for seed in range(10):
        cfg = SimConfig(seed=seed)
        g = cfg.geometry
        bound = 2 * g.subarrays_per_bank * math.ceil(math.log2(g.rows_per_subarray))
        smap, report = bench.run_discovery(cfg, strategy="binary")
        worst = max(worst, max(d.probes for d in report.discovery))
        exact += smap == SubarrayMap.from_geometry(g) and worst <= bound
    verdict(2, "discovery-exactness", exact == 10,
            f"{exact}/10 exact, max {worst} probes/bank, bound {bound}")


def test_3_copy_speedups():
    cfg = SimConfig()
    cfg = cfg.replace(cost=bench.calibrate(cfg))
    nf = bench.run_copy_bench(cfg, SWEEP, bench.NO_FLUSH)
    fl = bench.run_copy_bench(cfg, SWEEP, bench.FLUSH)
    s_nf, s_fl = nf.records[0].speedup, fl.records[0].speedup
    ordered = all(b.speedup < a.speedup for a, b in zip(nf.records, fl.records))
    ok = (within(s_nf, 118.5, 0.15) and within(s_fl, 14.6, 0.15) and ordered
          and len(nf.records) == len(fl.records) == len(SWEEP) and nf.ok and fl.ok)
    verdict(3, "copy-speedups", ok,
            f"8 KiB no-flush {s_nf:.1f}x, flush {s_fl:.1f}x, flush slower at all sizes: {ordered}")


def test_4_init_speedups():
    cfg = SimConfig()
    cfg = cfg.replace(cost=bench.calibrate(cfg))
    nf = bench.run_init_bench(cfg, [8 * KIB], bench.NO_FLUSH).records[0]
    fl = bench.run_init_bench(cfg, [8 * KIB], bench.FLUSH).records[0]
    # zero check over every initialized row across the size sweep
    s = build_stack(cfg, trace=False, characterize=False)
    rng = np.random.default_rng(4)
    rows = zero = 0
    for size in SWEEP:
        a = s.supervisor.alloc_align(size, Purpose.SINGLE)
        for r in a.rows:
            s.device.poke_row(a.bank, r, s.device.random_row(rng))
        s.lib.pim_init(a.vaddr, nbytes=size)
        for r in a.rows:
            rows += 1
            zero += not s.device.peek_row(a.bank, r).any()
        s.supervisor.free(a)
    ok = within(nf.speedup, 88.7, 0.15) and within(fl.speedup, 12.6, 0.15) and rows == zero
    verdict(4, "init-speedups", ok,
            f"no-flush {nf.speedup:.1f}x, flush {fl.speedup:.1f}x, {zero}/{rows} rows zero")


def test_5_trng_latency_throughput():
    cfg = SimConfig()
    t = bench.run_trng_bench(cfg, 40_000).trng[0]
    slow_cfg = cfg.replace(cost=dataclasses.replace(cfg.cost,
                                                    drange_period_ns=2 * cfg.cost.drange_period_ns))
    slow = bench.run_trng_bench(slow_cfg, 40_000).trng[0]
    ratio = t.throughput_mbps / slow.throughput_mbps
    ok = (within(t.latency_per_4bit_ns, 220.0, 0.05) and within(t.throughput_mbps, 8.30, 0.10)
          and within(ratio, 2.0, 0.01))
    verdict(5, "trng-latency-throughput", ok,
            f"{t.latency_per_4bit_ns:.1f} ns per 4 bits, {t.throughput_mbps:.3f} Mb/s, "
            f"period x2 -> throughput /{ratio:.4f}")


def test_6_randomness_quality():
    passed, details = 0, []
    for seed in range(5):
        s = build_stack(SimConfig(seed=seed), trace=False)
        r = run_randomness_tests(bench.harvest_bits(s, 1_000_000))
        ok = 0.49 <= r.ones_fraction <= 0.51 and r.chi_square_p >= 0.01
        passed += ok
        details.append(f"{r.ones_fraction:.4f}/p={r.chi_square_p:.3f}")
    verdict(6, "randomness-quality", passed >= 4, f"{passed}/5 seeds pass [{', '.join(details)}]")


def _observed_problems(flags: list[int]) -> list[str]:
    # host view of one op: START..., then ACK without START..., then ACK|FINISH
    rank = {int(Flag.START): 0, int(Flag.ACK): 1, int(Flag.ACK | Flag.FINISH): 2}
    probs = []
    ranks = []
    for f in flags:
        if f not in rank:
            probs.append(f"illegal flag value {f}")
        else:
            ranks.append(rank[f])
    if ranks != sorted(ranks):
        probs.append(f"flags went backwards {flags}")
    return probs


def test_7_handshake_protocol():
    s = build_stack(SimConfig(seed=3), trace=False, record_mmio=True)
    g = s.config.geometry
    rng = np.random.default_rng(7)
    pairs = [s.supervisor.alloc_align(g.row_bytes, Purpose.OPERAND_PAIR) for _ in range(16)]
    problems = []
    for i in range(10_000):
        mark = len(s.bus.log)
        kind = rng.integers(3)
        a = pairs[rng.integers(len(pairs))]
        mode = BlockingMode.ACK if rng.random() < 0.3 else BlockingMode.FINISH
        if kind == 0:
            s.lib.pim_copy(a.src, a.dst, mode)
        elif kind == 1:
            s.lib.pim_init(a.dst, mode)
        else:
            s.lib.rand_dram(int(rng.integers(1, 17)))
        if mode is BlockingMode.ACK and kind != 2:
            s.lib.poll_flag(Flag.FINISH)
        flags = [x.value for x in s.bus.log[mark:] if x.op == "load" and x.reg is PocRegister.FLAG]
        problems += [f"op {i}: {p}" for p in _observed_problems(flags)]
    problems += check_flag_trace(s.poc.flag_trace)
    ok = not problems and s.poc.accepted == 10_000
    verdict(7, "handshake-protocol", ok,
            f"{s.poc.accepted} ops accepted, {len(problems)} violations"
            + (f", first: {problems[0]}" if problems else ""))


ROWCLONE_PATTERN = [("ACT", "OK", "NONE"), ("PRE", "VIOLATED:tRAS", "NONE"),
                    ("ACT", "VIOLATED:tRP", "MULTI_ROW_ACT"), ("PRE", "OK", "NONE")]


def _shape(rec):
    v = rec.verdict if rec.verdict == "OK" else ":".join(rec.verdict.split(":")[:2])
    return rec.kind, v, rec.effect


def test_8_timing_hygiene():
    s = build_stack(SimConfig(seed=5), trace=True, characterize=False)
    g = s.config.geometry
    rng = np.random.default_rng(8)
    ctrl = s.controller
    words = g.capacity_bytes // g.word_bytes
    # concentrate on a few rows per bank so row hits and conflicts both occur
    hot = rng.integers(0, words, 64) * g.word_bytes
    for i in range(100_000):
        addr = int(hot[rng.integers(64)] if rng.random() < 0.5 else rng.integers(words) * g.word_bytes)
        if rng.random() < 0.5:
            ctrl.schedule_access(MemRequest(MemKind.WRITE, addr, int(rng.integers(2**63))))
        else:
            ctrl.schedule_access(MemRequest(MemKind.READ, addr))
    conv_bad = sum(r.verdict != "OK" for r in s.device.trace)
    n_conv = len(s.device.trace)
    # interleave RowClone ops with conventional traffic and check each op's slice
    bad_rc = 0
    for _ in range(500):
        a = s.supervisor.alloc_align(g.row_bytes, Purpose.OPERAND_PAIR)
        ctrl.schedule_access(MemRequest(MemKind.WRITE, s.supervisor.translate(a.src), 1))
        s.lib.pim_copy(a.src, a.dst)
        s.supervisor.free(a)
    for rec in ctrl.op_log:
        seq = s.device.trace[rec.first_trace_index:rec.first_trace_index + rec.n_commands]
        bad_rc += [_shape(r) for r in seq] != ROWCLONE_PATTERN
    outside = [r for i, r in enumerate(s.device.trace[n_conv:]) if r.verdict != "OK"]
    in_ops = 2 * len(ctrl.op_log)
    ok = conv_bad == 0 and bad_rc == 0 and len(ctrl.op_log) == 500 and len(outside) == in_ops
    verdict(8, "timing-hygiene", ok,
            f"{n_conv} conventional commands with {conv_bad} violations; "
            f"{len(ctrl.op_log) - bad_rc}/{len(ctrl.op_log)} RowClone traces match the pattern")


def test_9_determinism(tmp_path):
    runs = []
    for name in ("first", "second"):
        out = tmp_path / name
        files = {}
        for sub in (["trace-dump"], ["copy-bench", "--sizes", "8K,64K", "--trace"],
                    ["init-bench", "--sizes", "8K", "--trace"], ["trng-bench", "--bits", "4000", "--trace"],
                    ["randomness", "--bits", "100000"]):
            d = out / sub[0]
            assert cli.run(sub + ["--seed", "9", "--out", str(d)]) == 0
            for f in sorted(d.iterdir()):
                files[f"{sub[0]}/{f.name}"] = f.read_bytes()
        runs.append(files)
    same = runs[0] == runs[1]
    verdict(9, "determinism", same and len(runs[0]) >= 12,
            f"{len(runs[0])} files compared, identical: {same}")
