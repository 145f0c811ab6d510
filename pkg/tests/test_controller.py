import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pidram_sim.addrmap import AddressError, AddressMap
from pidram_sim.config import ControllerConfig, TimingParams
from pidram_sim.controller import (
    ControllerError, MemKind, MemoryController, MemRequest, NotCharacterizedError, PimKind,
    PimOpRequest, RngBuffer, UnsupportedOperandError,
)
from pidram_sim.device import DramDevice

from conftest import SMALL_GEOMETRY

T = TimingParams()
G = SMALL_GEOMETRY


def make(config=None, seed=3, characterize=False, period_ns=482.0):
    dev = DramDevice(G, T, seed=seed)
    ctrl = MemoryController(dev, AddressMap(G), config or ControllerConfig(), period_ns)
    if characterize:
        ctrl.characterize()
    return ctrl


def addr(ctrl, bank, row, col):
    return ctrl.address_map.dram_to_phys(bank, row, col)


def kinds(dev, start=0):
    return [r.kind for r in dev.trace[start:]]


# -- conventional path -------------------------------------------------------------

def test_write_then_read():
    c = make()
    a = addr(c, 1, 17, 5)
    c.schedule_access(MemRequest(MemKind.WRITE, a, 0xFEED))
    assert c.schedule_access(MemRequest(MemKind.READ, a)) == 0xFEED


def test_row_hit_cheaper_than_row_miss():
    # closed-bank read: ACT, RD after tRCD, data after tCL
    miss = T.tRCD + T.tCL
    # row conflict: PRE waits for tRAS, ACT waits for tRC from the first ACT
    conflict = T.tRC + T.tRCD + T.tCL - miss
    hit = T.tCL

    c = make()
    c.schedule_access(MemRequest(MemKind.READ, addr(c, 0, 3, 0)))
    assert c.now == miss
    c.schedule_access(MemRequest(MemKind.READ, addr(c, 0, 3, 1)))
    assert c.now == miss + hit
    assert kinds(c.device) == ["ACT", "RD", "RD"]

    c2 = make()
    c2.schedule_access(MemRequest(MemKind.READ, addr(c2, 0, 3, 0)))
    c2.schedule_access(MemRequest(MemKind.READ, addr(c2, 0, 4, 0)))
    assert c2.now == miss + conflict
    assert miss + hit < miss + conflict
    assert kinds(c2.device) == ["ACT", "RD", "PRE", "ACT", "RD"]


def test_unmapped_address():
    c = make()
    with pytest.raises(AddressError):
        c.schedule_access(MemRequest(MemKind.READ, G.capacity_bytes))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, G.capacity_bytes - 1),
                          st.integers(0, 2**64 - 1), st.integers(0, 30)), max_size=120))
def test_conventional_path_never_violates(reqs):
    c = make()
    shadow = {}
    at = 0
    for is_write, a, v, gap in reqs:
        at += gap
        a -= a % G.word_bytes
        if is_write:
            c.schedule_access(MemRequest(MemKind.WRITE, a, v), at)
            shadow[a] = v
        else:
            assert c.schedule_access(MemRequest(MemKind.READ, a), at) == shadow.get(a, 0)
    assert all(r.verdict == "OK" for r in c.device.trace)


# -- RowClone ------------------------------------------------------------------------

def test_rowclone_copy_same_subarray(rng):
    c = make()
    p = c.device.random_row(rng)
    c.device.poke_row(1, 10, p)
    t = c.exec_rowclone_copy((1, 10), (1, 20))
    assert np.array_equal(c.device.peek_row(1, 20), p)
    tr = c.device.trace
    assert [r.kind for r in tr] == ["ACT", "PRE", "ACT", "PRE"]
    assert t.start_cycle == tr[0].cycle and t.last_command_cycle == tr[-1].cycle
    assert tr[1].cycle - tr[0].cycle == 3 and tr[2].cycle - tr[1].cycle == 3
    assert c.device.banks[1].open_row is None


def test_rowclone_cross_subarray_fails(rng):
    c = make()
    p = c.device.random_row(rng)
    c.device.poke_row(0, 0, p)
    c.exec_rowclone_copy((0, 0), (0, G.rows_per_subarray))
    assert not np.array_equal(c.device.peek_row(0, G.rows_per_subarray), p)


def test_rowclone_self_copy(rng):
    c = make()
    p = c.device.random_row(rng)
    c.device.poke_row(0, 6, p)
    c.exec_rowclone_copy((0, 6), (0, 6))
    assert np.array_equal(c.device.peek_row(0, 6), p)


def test_rowclone_different_banks_rejected():
    c = make()
    with pytest.raises(UnsupportedOperandError):
        c.exec_rowclone_copy((0, 1), (1, 1))
    assert c.device.trace == []


def test_rowclone_closes_open_row_first(rng):
    c = make()
    a = addr(c, 0, 30, 0)
    c.schedule_access(MemRequest(MemKind.WRITE, a, 77))
    c.device.poke_row(0, 1, c.device.random_row(rng))
    c.exec_rowclone_copy((0, 1), (0, 2))
    assert c.device.peek_row(0, 30)[0] == 77
    assert [r.verdict for r in c.device.trace[:3]] == ["OK", "OK", "OK"]


def test_init_zeroes_and_is_idempotent(rng):
    c = make()
    c.device.poke_row(0, 9, c.device.random_row(rng))
    c.exec_rowclone_init((0, 9), zero_row=(0, 0))
    assert not c.device.peek_row(0, 9).any()
    c.exec_rowclone_init((0, 9), zero_row=(0, 0))
    assert not c.device.peek_row(0, 9).any()


def test_init_zero_row_in_other_subarray_rejected():
    c = make()
    with pytest.raises(UnsupportedOperandError):
        c.exec_rowclone_init((0, 9), zero_row=(0, G.rows_per_subarray))


def test_pim_ops_are_atomic_and_logged(rng):
    c = make(characterize=True)
    c.schedule_access(MemRequest(MemKind.WRITE, addr(c, 0, 5, 0), 1))
    c.execute(PimOpRequest(PimKind.RC_COPY, (0, 1), (0, 2)))
    c.schedule_access(MemRequest(MemKind.READ, addr(c, 0, 5, 0)))
    c.execute(PimOpRequest(PimKind.DR_RAND, n_bits=8))
    tr = c.device.trace
    for rec in c.op_log:
        seq = tr[rec.first_trace_index:rec.first_trace_index + rec.n_commands]
        assert seq[-1].cycle == rec.timing.last_command_cycle
        assert seq[0].cycle == rec.timing.start_cycle
        # nothing else issued between the first and last command of the op
        inside = [r for r in tr if rec.timing.start_cycle <= r.cycle <= rec.timing.last_command_cycle]
        assert inside == list(seq)


# -- D-RaNGe ------------------------------------------------------------------------

def test_characterize_picks_half_cells():
    c = make(characterize=True)
    assert len(c.rng_cells) == 4
    bank, row, _ = c.rng_cells[0]
    assert all((b, r) == (bank, row) for b, r, _ in c.rng_cells)
    for b, r, bit in c.rng_cells:
        assert abs(c.device.bias.p(b, r, bit) - 0.5) < 0.05
    assert not c.device.peek_row(bank, row).any()


def test_fill_four_is_one_access():
    c = make(characterize=True)
    c.exec_drange_fill(4)
    assert len(c.rng) == 4
    assert kinds(c.device).count("ACT") == 1
    rds = [r for r in c.device.trace if r.kind == "RD"]
    assert rds and all(r.verdict.startswith("VIOLATED:tRCD") and r.effect == "WEAK_READ"
                       for r in rds)


def test_fill_zero_issues_nothing():
    c = make(characterize=True)
    c.exec_drange_fill(0)
    assert c.device.trace == [] and len(c.rng) == 0


def test_fill_eight_two_accesses_spaced_by_trc():
    c = make(characterize=True)
    c.exec_drange_fill(8)
    acts = [r.cycle for r in c.device.trace if r.kind == "ACT"]
    assert len(acts) == 2
    assert acts[1] - acts[0] >= T.tRC
    assert acts[1] - acts[0] == T.to_cycles(482.0)


def test_fill_stops_when_buffer_full():
    c = make(ControllerConfig(rng_capacity=8), characterize=True)
    c.exec_drange_fill(100)
    assert len(c.rng) == 8


def test_pop_on_empty_buffer_harvests_once():
    c = make(characterize=True)
    bits, t = c.rng_pop(4)
    assert len(bits) == 4 and set(bits) <= {0, 1}
    ks = kinds(c.device)
    assert ks[0] == "ACT" and ks[-1] == "PRE" and set(ks[1:-1]) == {"RD"}
    assert ks.count("ACT") == 1
    assert t.last_command_cycle == c.device.trace[-1].cycle


def test_not_characterized():
    c = make()
    with pytest.raises(NotCharacterizedError):
        c.exec_drange_fill(4)
    with pytest.raises(NotCharacterizedError):
        c.rng_pop(4)
    with pytest.raises(NotCharacterizedError):
        c.execute(PimOpRequest(PimKind.DR_RAND, n_bits=4))


def test_explicit_rand_cells_in_request():
    c = make()
    cells = ((1, 7, 3), (1, 7, 200))
    r = c.execute(PimOpRequest(PimKind.DR_RAND, n_bits=2, rand_cells=cells))
    assert len(r.bits) == 2 and c.rng_cells == cells
    with pytest.raises(UnsupportedOperandError):
        c.set_rng_cells(((0, 1, 1), (0, 2, 1)))


def test_background_fill_and_conservation():
    c = make(ControllerConfig(fill_policy="background", rng_capacity=64), characterize=True)
    c.schedule_access(MemRequest(MemKind.READ, addr(c, 1, 3, 0)), at=20_000)
    assert len(c.rng) == 64
    bits, _ = c.rng_pop(100, not_before=c.now)  # short read in background mode
    assert len(bits) == 64
    s = c.stats_record()
    assert s["bits_delivered"] == s["bits_harvested"] - s["rng_occupancy"]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.one_of(st.tuples(st.just("push"), st.lists(st.integers(0, 1), max_size=20)),
                          st.tuples(st.just("pop"), st.integers(0, 30))), max_size=60))
def test_rng_buffer_fifo_and_capacity(ops):
    buf = RngBuffer(capacity=32)
    model = []
    for op, arg in ops:
        if op == "push":
            if len(arg) > buf.free:
                with pytest.raises(OverflowError):
                    buf.push(arg)
                continue
            buf.push(arg)
            model += arg
        else:
            got = buf.pop(arg)
            assert got == model[:arg]
            model = model[arg:]
        assert 0 <= len(buf) <= buf.capacity
        assert len(buf) == len(model)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=15))
def test_pop_conservation_on_demand(requests):
    c = make(ControllerConfig(rng_capacity=16), characterize=True)
    for n in requests:
        bits, _ = c.rng_pop(n)
        assert len(bits) == n
        assert len(c.rng) <= 16
    s = c.stats_record()
    assert s["bits_delivered"] == sum(requests)
    assert s["bits_delivered"] == s["bits_harvested"] - s["rng_occupancy"]


def test_unknown_op_kind():
    c = make()
    with pytest.raises(ControllerError):
        c.execute(PimOpRequest("BOGUS"))
