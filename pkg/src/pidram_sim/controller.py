"""In-order memory controller with PiM command sequences.

Conventional requests are served one at a time with nominal timing and an
open-row policy. PiM operations are command templates: an ordered list of
steps, each placed a fixed gap after an earlier step. Adding a technique means
adding a template, not touching the scheduler.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .addrmap import AddressMap
from .bias import CellBiasMap
from .config import ControllerConfig, TimingParams
from .device import CommandKind, DramCommand, DramDevice, DeviceResponse

Row = tuple[int, int]  # (bank, row)


class ControllerError(Exception):
    pass


class UnsupportedOperandError(ControllerError, ValueError):
    pass


class NotCharacterizedError(ControllerError):
    pass


class MemKind(enum.Enum):
    READ = "READ"
    WRITE = "WRITE"


@dataclass(frozen=True)
class MemRequest:
    kind: MemKind
    phys_addr: int
    data: int = 0


class PimKind(enum.Enum):
    RC_COPY = "RC_COPY"
    RC_INIT = "RC_INIT"
    DR_RAND = "DR_RAND"


@dataclass(frozen=True)
class PimOpRequest:
    kind: PimKind
    src_row: Row | None = None
    dst_row: Row | None = None
    n_bits: int = 0
    rand_cells: tuple[tuple[int, int, int], ...] = ()


@dataclass(frozen=True)
class OpTiming:
    start_cycle: int
    last_command_cycle: int

    def __post_init__(self):
        if self.last_command_cycle < self.start_cycle:
            raise ValueError("last_command_cycle precedes start_cycle")


@dataclass(frozen=True)
class OpRecord:
    kind: PimKind
    timing: OpTiming
    first_trace_index: int
    n_commands: int


@dataclass
class OpResult:
    timing: OpTiming
    bits: list[int] = field(default_factory=list)


class RngBuffer:
    def __init__(self, capacity: int = 1024, fill_policy: str = "on_demand"):
        self.capacity = capacity
        self.fill_policy = fill_policy
        self._bits: deque[int] = deque()

    def __len__(self) -> int:
        return len(self._bits)

    @property
    def free(self) -> int:
        return self.capacity - len(self._bits)

    def push(self, bits) -> None:
        bits = list(bits)
        if len(bits) > self.free:
            raise OverflowError(f"pushing {len(bits)} bits into {self.free} free slots")
        self._bits.extend(bits)

    def pop(self, n: int) -> list[int]:
        n = min(n, len(self._bits))
        return [self._bits.popleft() for _ in range(n)]


@dataclass(frozen=True)
class Step:
    kind: CommandKind
    target: str | None = None  # operand name for ACT, column for RD
    ref: int | None = None     # index of the step this one is timed from; None = previous
    gap: str | int = 0         # cycles, or the name of a timing/controller parameter


@dataclass(frozen=True)
class PimTemplate:
    name: str
    steps: tuple[Step, ...]


ROWCLONE = PimTemplate("rowclone", (
    Step(CommandKind.ACT, "src"),
    Step(CommandKind.PRE, gap="rc_act_pre_cycles"),
    Step(CommandKind.ACT, "dst", gap="rc_pre_act_cycles"),
    # full tRAS after the second ACT so dst is restored, leaving the bank precharged
    Step(CommandKind.PRE, ref=2, gap="tRAS"),
))


def drange_template(columns) -> PimTemplate:
    steps = [Step(CommandKind.ACT, "rng")]
    for i, col in enumerate(columns):
        steps.append(Step(CommandKind.RD, col, ref=0, gap=f"drange_trcd_cycles+{i}"))
    steps.append(Step(CommandKind.PRE, ref=0, gap="tRAS"))
    return PimTemplate("drange", tuple(steps))


@lru_cache(maxsize=64)
def _best_rng_row(bias: CellBiasMap, bank: int, n_rows: int, k: int) -> tuple[int, tuple[int, ...]]:
    best = None
    for row in range(n_rows):
        pos, p = bias.row_cells(bank, row)
        if len(pos) < k:
            continue
        dev = np.abs(p - 0.5)
        pick = np.argpartition(dev, k - 1)[:k] if len(pos) > k else np.arange(k)
        score = float(dev[pick].max())
        if best is None or score < best[0]:
            best = (score, row, tuple(sorted(int(b) for b in pos[pick])))
    if best is None:
        raise NotCharacterizedError(f"no row in bank {bank} has {k} weak cells")
    return best[1], best[2]


class MemoryController:
    def __init__(
        self,
        device: DramDevice,
        address_map: AddressMap | None = None,
        config: ControllerConfig | None = None,
        drange_period_ns: float = 482.0,
    ):
        self.device = device
        self.timing: TimingParams = device.timing
        self.address_map = address_map or AddressMap(device.geometry)
        self.config = config or ControllerConfig()
        self.drange_period_cycles = self.timing.to_cycles(drange_period_ns)
        self.rng = RngBuffer(self.config.rng_capacity, self.config.fill_policy)
        self.rng_cells: tuple[tuple[int, int, int], ...] = ()
        self.now = 0
        self._last_drange_act: int | None = None
        self._op_first: int | None = None
        self.op_log: list[OpRecord] = []
        self.stats = {
            "requests": 0,
            "commands": 0,
            "pim_ops": 0,
            "violations_intended": 0,
            "drange_accesses": 0,
            "bits_harvested": 0,
            "bits_delivered": 0,
        }

    # -- helpers -----------------------------------------------------------

    def _param(self, gap) -> int:
        if isinstance(gap, int):
            return gap
        total = 0
        for term in gap.split("+"):
            term = term.strip()
            if term.lstrip("-").isdigit():
                total += int(term)
            elif hasattr(self.config, term):
                total += getattr(self.config, term)
            else:
                total += getattr(self.timing, term)
        return total

    def _issue(self, kind, bank, cycle, row=None, column=None, data=None) -> DeviceResponse:
        resp = self.device.issue_command(DramCommand(kind, bank, row, column, data, cycle))
        self.stats["commands"] += 1
        return resp

    def _bank_ready_for_act(self, bank: int, t: int) -> int:
        st = self.device.banks[bank]
        tm = self.timing
        if st.last_pre_cycle is not None:
            t = max(t, st.last_pre_cycle + tm.tRP)
        if st.last_act_cycle is not None:
            t = max(t, st.last_act_cycle + tm.tRC)
        return t

    def _close_bank(self, bank: int, t: int) -> int:
        """Nominal PRE if the bank is open. Returns the next free command cycle."""
        st = self.device.banks[bank]
        if st.open_row is None:
            return t
        tm = self.timing
        t = max(t, st.last_act_cycle + tm.tRAS)
        if st.last_wr_cycle is not None and st.last_wr_cycle >= st.last_act_cycle:
            t = max(t, st.last_wr_cycle + tm.tWR)
        self._expect_ok(self._issue(CommandKind.PRE, bank, t))
        return t + 1

    def precharge(self, bank: int | None = None) -> None:
        """Close one bank (or all) so the cell arrays hold every written value."""
        for b in range(self.device.geometry.banks) if bank is None else (bank,):
            self.now = self._close_bank(b, self.now)

    @staticmethod
    def _expect_ok(resp: DeviceResponse):
        if not resp.verdict.ok:
            raise ControllerError(f"conventional command violated timing: {resp.verdict}")

    # -- conventional path -------------------------------------------------

    def schedule_access(self, req: MemRequest, at: int = 0) -> int | None:
        """Serve one read or write with nominal timing; `now` ends at completion."""
        bank, row, col = self.address_map.phys_to_dram(req.phys_addr)
        self._background_fill(at)
        tm = self.timing
        t = max(self.now, at)
        st = self.device.banks[bank]
        if st.open_row != row:
            t = self._close_bank(bank, t)
            t = self._bank_ready_for_act(bank, t)
            self._expect_ok(self._issue(CommandKind.ACT, bank, t, row=row))
            t += 1
        t = max(t, st.last_act_cycle + tm.tRCD)
        self.stats["requests"] += 1
        if req.kind is MemKind.READ:
            resp = self._issue(CommandKind.RD, bank, t, column=col)
            self._expect_ok(resp)
            self.now = t + tm.tCL
            return resp.data
        self._expect_ok(self._issue(CommandKind.WR, bank, t, column=col, data=req.data))
        self.now = t + 1
        return None

    # -- PiM sequences -----------------------------------------------------

    def _run_template(self, template: PimTemplate, bank: int, operands: dict,
                      not_before: int) -> tuple[OpTiming, list[DeviceResponse], int]:
        t = self._close_bank(bank, max(self.now, not_before))
        first_index = self._trace_len()
        start = self._bank_ready_for_act(bank, t)
        if template is not ROWCLONE and self._last_drange_act is not None:
            start = max(start, self._last_drange_act + self.drange_period_cycles)
        cycles: list[int] = []
        responses = []
        for i, step in enumerate(template.steps):
            if i == 0:
                c = start
            else:
                ref = i - 1 if step.ref is None else step.ref
                c = cycles[ref] + self._param(step.gap)
                c = max(c, cycles[-1] + 1)
            cycles.append(c)
            if step.kind is CommandKind.ACT:
                responses.append(self._issue(CommandKind.ACT, bank, c, row=operands[step.target]))
            elif step.kind is CommandKind.RD:
                responses.append(self._issue(CommandKind.RD, bank, c, column=step.target))
            else:
                responses.append(self._issue(step.kind, bank, c))
        self.now = cycles[-1] + 1
        return OpTiming(start, cycles[-1]), responses, first_index

    def _record(self, kind: PimKind, timing: OpTiming, first: int, n: int):
        self.op_log.append(OpRecord(kind, timing, first, n))
        self.stats["pim_ops"] += 1

    def _trace_len(self) -> int:
        tr = self.device.trace
        return len(tr) if tr is not None else self.stats["commands"]

    def exec_rowclone_copy(self, src_row: Row, dst_row: Row, not_before: int = 0,
                           kind: PimKind = PimKind.RC_COPY) -> OpTiming:
        (sb, sr), (db, dr) = src_row, dst_row
        if sb != db:
            raise UnsupportedOperandError(f"RowClone operands in different banks ({sb} vs {db})")
        for b, r in (src_row, dst_row):
            self.device._check_bank(b)
            self.device._check_row(r)
        self._background_fill(not_before)
        timing, responses, first = self._run_template(ROWCLONE, sb, {"src": sr, "dst": dr},
                                                      not_before)
        self.stats["violations_intended"] += 2
        self._record(kind, timing, first, len(responses))
        return timing

    def exec_rowclone_init(self, dst_row: Row, zero_row: Row, not_before: int = 0) -> OpTiming:
        g = self.device.geometry
        if zero_row[0] != dst_row[0] or g.subarray_of(zero_row[1]) != g.subarray_of(dst_row[1]):
            raise UnsupportedOperandError(f"zero row {zero_row} is not in the subarray of {dst_row}")
        return self.exec_rowclone_copy(zero_row, dst_row, not_before, kind=PimKind.RC_INIT)

    # -- D-RaNGe -----------------------------------------------------------

    def characterize(self, bias: CellBiasMap | None = None) -> tuple[tuple[int, int, int], ...]:
        """Pick the row whose `rng_cells_per_access` cells sit closest to 50% failure.

        The chosen row is zero-filled so a harvested bit is simply the bit read.
        """
        cfg = self.config
        bias = bias or self.device.bias
        n_rows = min(cfg.characterization_rows, self.device.geometry.rows_per_bank)
        row, bits = _best_rng_row(bias, cfg.rng_bank, n_rows, cfg.rng_cells_per_access)
        self.set_rng_cells(tuple((cfg.rng_bank, row, b) for b in bits))
        return self.rng_cells

    def set_rng_cells(self, cells) -> None:
        cells = tuple((int(b), int(r), int(c)) for b, r, c in cells)
        if not cells:
            raise NotCharacterizedError("no RNG cells given")
        if len({(b, r) for b, r, _ in cells}) != 1:
            raise UnsupportedOperandError("RNG cells must share one row")
        bank, row, _ = cells[0]
        self.device.poke_row(bank, row, np.zeros(self.device.geometry.columns_per_row, np.uint64))
        self.rng_cells = cells

    @property
    def rng_row(self) -> Row | None:
        return self.rng_cells[0][:2] if self.rng_cells else None

    def _drange_access(self, not_before: int) -> tuple[OpTiming, list[int]]:
        bank, row = self.rng_row
        w = self.device.geometry.word_bits
        by_col: dict[int, list[int]] = {}
        for _, _, bit in self.rng_cells:
            by_col.setdefault(bit // w, []).append(bit % w)
        cols = sorted(by_col)
        timing, responses, first = self._run_template(drange_template(cols), bank, {"rng": row},
                                                      not_before)
        if self._op_first is None:
            self._op_first = first
        bits = []
        for col, resp in zip(cols, responses[1:-1]):
            for b in by_col[col]:
                bits.append((resp.data >> b) & 1)
        self._last_drange_act = timing.start_cycle
        self.stats["drange_accesses"] += 1
        self.stats["violations_intended"] += len(cols)
        self.stats["bits_harvested"] += len(bits)
        return timing, bits

    def _fill(self, n_bits: int, not_before: int) -> tuple[int, int] | None:
        per = len(self.rng_cells)
        span = None
        got = 0
        while got < n_bits and self.rng.free >= per:
            t, bits = self._drange_access(not_before)
            self.rng.push(bits)
            got += len(bits)
            span = (t.start_cycle if span is None else span[0], t.last_command_cycle)
        return span

    def exec_drange_fill(self, n_bits: int, not_before: int = 0) -> OpTiming:
        """Harvest at least `n_bits` into the buffer, stopping early when it is full."""
        if not self.rng_cells:
            raise NotCharacterizedError("D-RaNGe cells have not been characterized")
        span = self._fill(n_bits, not_before)
        if span is None:
            start = max(self.now, not_before)
            return OpTiming(start, start)
        return OpTiming(*span)

    def rng_pop(self, n_bits: int, not_before: int = 0) -> tuple[list[int], OpTiming]:
        """Pop up to `n_bits` FIFO-order; on-demand mode harvests any deficit first."""
        start = max(self.now, not_before)
        span = None
        out: list[int] = []
        if self.config.fill_policy == "background":
            self._background_fill(not_before)
            out = self.rng.pop(n_bits)
        else:
            if n_bits > len(self.rng) and not self.rng_cells:
                raise NotCharacterizedError("D-RaNGe cells have not been characterized")
            while len(out) < n_bits:
                deficit = n_bits - len(out) - len(self.rng)
                if deficit > 0:
                    got = self._fill(min(deficit, self.rng.free), not_before)
                    if got is not None:
                        span = got if span is None else (span[0], got[1])
                out += self.rng.pop(n_bits - len(out))
        self.stats["bits_delivered"] += len(out)
        if span is None:
            return out, OpTiming(start, start)
        return out, OpTiming(*span)

    def _background_fill(self, until: int) -> None:
        if self.config.fill_policy != "background" or not self.rng_cells:
            return
        per = len(self.rng_cells)
        while self.rng.free >= per:
            nxt = max(self.now, self._last_drange_act + self.drange_period_cycles
                      if self._last_drange_act is not None else 0)
            if nxt + self.timing.tRAS >= until:
                return
            _, bits = self._drange_access(nxt)
            self.rng.push(bits)

    # -- POC entry point ---------------------------------------------------

    def execute(self, op: PimOpRequest, not_before: int = 0) -> OpResult:
        if op.kind is PimKind.RC_COPY:
            return OpResult(self.exec_rowclone_copy(op.src_row, op.dst_row, not_before))
        if op.kind is PimKind.RC_INIT:
            return OpResult(self.exec_rowclone_init(op.dst_row, op.src_row, not_before))
        if op.kind is PimKind.DR_RAND:
            if op.rand_cells and tuple(op.rand_cells) != self.rng_cells:
                self.set_rng_cells(op.rand_cells)
            if not self.rng_cells:
                raise NotCharacterizedError("D-RaNGe cells have not been characterized")
            # a bank close issued before the first access is not part of the op
            self._op_first = None
            bits, timing = self.rng_pop(op.n_bits, not_before)
            first = self._trace_len() if self._op_first is None else self._op_first
            self._record(PimKind.DR_RAND, timing, first, self._trace_len() - first)
            return OpResult(timing, bits)
        raise UnsupportedOperandError(f"unknown PiM op {op.kind!r}")

    def stats_record(self) -> dict:
        rec = dict(self.stats)
        rec["rng_occupancy"] = len(self.rng)
        rec["cycle"] = self.now
        return rec


def format_stats(stats: dict) -> str:
    return "\n".join(f"{k}: {v}" for k, v in stats.items()) + "\n"
