"""Behavioral DRAM device with timing-violation side effects.

Two violations have observable consequences:

* ACT(r1), PRE at most ``t_ras_max_cycles`` later, ACT(r2) at most
  ``t_rp_max_cycles`` after that: the still-charged bitlines overwrite r2 with
  r1 when both rows share a subarray (in-DRAM copy). Across subarrays r2 gets
  a seeded garbage pattern.
* RD issued before tRCD elapsed: each bit of the returned word flips with its
  cell's activation-failure probability.

Everything else behaves like a plain open-row DRAM bank: ACT loads the row
into the row buffer, RD/WR touch the row buffer, PRE writes it back.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .bias import MASK64, CellBiasMap, prf_uniform
from .config import BiasParams, DeviceConfig, DeviceGeometry, TimingParams

_CORRUPT_STREAM_TAG = 0xC0AA


class DramError(Exception):
    pass


class RejectedCommandError(DramError, ValueError):
    """Malformed command or out-of-range address."""


class ProtocolError(DramError):
    """Well-formed command that the bank state does not allow."""


class CommandKind(enum.Enum):
    ACT = "ACT"
    PRE = "PRE"
    RD = "RD"
    WR = "WR"
    REF = "REF"
    NOP = "NOP"


class BankStatus(enum.Enum):
    PRECHARGED = "PRECHARGED"
    ACTIVATING = "ACTIVATING"
    ACTIVE = "ACTIVE"
    PRECHARGING = "PRECHARGING"


class Effect(enum.Enum):
    NONE = "NONE"
    MULTI_ROW_ACT = "MULTI_ROW_ACT"
    WEAK_READ = "WEAK_READ"


class ResponseKind(enum.Enum):
    DATA = "DATA"
    DONE = "DONE"
    TIMING_FAULT = "TIMING_FAULT"


@dataclass(frozen=True, slots=True)
class DramCommand:
    kind: CommandKind
    bank: int = 0
    row: int | None = None
    column: int | None = None
    data: int | None = None
    issue_cycle: int = 0


@dataclass(frozen=True, slots=True)
class TimingVerdict:
    param: str | None = None
    slack: int = 0

    @property
    def ok(self) -> bool:
        return self.param is None

    def __str__(self) -> str:
        return "OK" if self.ok else f"VIOLATED:{self.param}:{self.slack}"


OK = TimingVerdict()


@dataclass(frozen=True, slots=True)
class DeviceResponse:
    kind: ResponseKind
    data: int | None = None
    effect: Effect = Effect.NONE
    verdict: TimingVerdict = OK


@dataclass(slots=True)
class BankState:
    rowbuffer: np.ndarray
    status: BankStatus = BankStatus.PRECHARGED
    open_row: int | None = None
    last_act_cycle: int | None = None
    last_pre_cycle: int | None = None
    last_rw_cycle: int | None = None
    last_wr_cycle: int | None = None
    # row closed by the most recent PRE, and whether that PRE cut tRAS short
    # enough to leave the bitlines charged
    closed_row: int | None = None
    early_pre: bool = False


class TraceRecord(NamedTuple):
    cycle: int
    kind: str
    bank: int
    row: int | None
    col: int | None
    verdict: str
    effect: str

    def to_csv(self) -> str:
        row = "" if self.row is None else self.row
        col = "" if self.col is None else self.col
        return f"{self.cycle},{self.kind},{self.bank},{row},{col},{self.verdict},{self.effect}"


TRACE_HEADER = "cycle,kind,bank,row,col,verdict,effect"


def check_timing(cmd: DramCommand, state: BankState, t: TimingParams) -> TimingVerdict:
    """Check the command against tRCD, tRAS, tRP and tWR for its bank.

    When several constraints fail, the one with the largest shortfall wins.
    """
    now = cmd.issue_cycle
    worst = OK
    kind = cmd.kind

    def need(param: str, since: int | None, gap: int):
        nonlocal worst
        if since is None:
            return
        short = since + gap - now
        if short > 0 and short > worst.slack:
            worst = TimingVerdict(param, short)

    is_open = state.open_row is not None
    if kind is CommandKind.ACT:
        need("tRP", state.last_pre_cycle, t.tRP)
    elif kind is CommandKind.PRE:
        if is_open:
            need("tRAS", state.last_act_cycle, t.tRAS)
            if state.last_wr_cycle is not None and state.last_wr_cycle >= state.last_act_cycle:
                need("tWR", state.last_wr_cycle, t.tWR)
    elif kind in (CommandKind.RD, CommandKind.WR):
        if is_open:
            need("tRCD", state.last_act_cycle, t.tRCD)
    elif not isinstance(kind, CommandKind):
        raise RejectedCommandError(f"unknown command kind {kind!r}")
    return worst


class DramDevice:
    """One DRAM rank: `banks` banks of sparse row storage plus bank state."""

    def __init__(
        self,
        geometry: DeviceGeometry | None = None,
        timing: TimingParams | None = None,
        bias: BiasParams | CellBiasMap | None = None,
        seed: int = 1,
        config: DeviceConfig | None = None,
        trace: bool = True,
    ):
        self.geometry = geometry or DeviceGeometry()
        self.timing = timing or TimingParams()
        self.config = config or DeviceConfig()
        self.seed = seed
        if isinstance(bias, CellBiasMap):
            self.bias = bias
        else:
            self.bias = CellBiasMap(bias or BiasParams(), self.geometry, seed)
        g = self.geometry
        self.word_mask = (1 << g.word_bits) - 1
        self._rows: dict[tuple[int, int], np.ndarray] = {}
        self.banks = [BankState(self._zero_row()) for _ in range(g.banks)]
        self.trace: list[TraceRecord] | None = [] if trace else None
        self.last_issue_cycle = 0
        self._weak_counters: dict[tuple[int, int, int], int] = {}
        self._corruptions = 0
        self.stats = {"commands": 0, "violations": 0, "multi_row_act": 0, "weak_reads": 0}

    # -- storage -----------------------------------------------------------

    def _zero_row(self) -> np.ndarray:
        return np.zeros(self.geometry.columns_per_row, dtype=np.uint64)

    def _check_bank(self, bank):
        if not isinstance(bank, (int, np.integer)) or not 0 <= bank < self.geometry.banks:
            raise RejectedCommandError(f"bank {bank!r} out of range")

    def _check_row(self, row):
        if not isinstance(row, (int, np.integer)) or not 0 <= row < self.geometry.rows_per_bank:
            raise RejectedCommandError(f"row {row!r} out of range")

    def _check_col(self, col):
        if not isinstance(col, (int, np.integer)) or not 0 <= col < self.geometry.columns_per_row:
            raise RejectedCommandError(f"column {col!r} out of range")

    def _cells(self, bank: int, row: int) -> np.ndarray:
        cells = self._rows.get((bank, row))
        return self._zero_row() if cells is None else cells

    def peek_row(self, bank: int, row: int) -> np.ndarray:
        """Copy of the cell array for one row, as column words. Ignores timing and bank state."""
        self._check_bank(bank)
        self._check_row(row)
        return self._cells(bank, row).copy()

    def poke_row(self, bank: int, row: int, words) -> None:
        self._check_bank(bank)
        self._check_row(row)
        arr = np.asarray(words, dtype=np.uint64)
        if arr.shape != (self.geometry.columns_per_row,):
            raise RejectedCommandError(
                f"row data must have {self.geometry.columns_per_row} words, got shape {arr.shape}"
            )
        if self.geometry.word_bits < 64:
            arr = arr & np.uint64(self.word_mask)
        self._rows[(bank, row)] = arr.copy()

    def random_row(self, rng: np.random.Generator) -> np.ndarray:
        words = rng.integers(0, MASK64, size=self.geometry.columns_per_row,
                             dtype=np.uint64, endpoint=True)
        if self.geometry.word_bits < 64:
            words &= np.uint64(self.word_mask)
        return words

    # -- command execution -------------------------------------------------

    def bank_status(self, bank: int, cycle: int) -> BankStatus:
        st = self.banks[bank]
        t = self.timing
        if st.open_row is not None:
            if cycle < st.last_act_cycle + t.tRCD:
                return BankStatus.ACTIVATING
            return BankStatus.ACTIVE
        if st.last_pre_cycle is not None and cycle < st.last_pre_cycle + t.tRP:
            return BankStatus.PRECHARGING
        return BankStatus.PRECHARGED

    def check(self, cmd: DramCommand) -> TimingVerdict:
        self._validate(cmd)
        return check_timing(cmd, self.banks[cmd.bank], self.timing)

    def _validate(self, cmd: DramCommand):
        if not isinstance(cmd.kind, CommandKind):
            raise RejectedCommandError(f"unknown command kind {cmd.kind!r}")
        self._check_bank(cmd.bank)
        if cmd.kind is CommandKind.ACT:
            self._check_row(cmd.row)
        elif cmd.kind in (CommandKind.RD, CommandKind.WR):
            self._check_col(cmd.column)
            if cmd.kind is CommandKind.WR and not isinstance(cmd.data, (int, np.integer)):
                raise RejectedCommandError("WR needs integer data")
        if not isinstance(cmd.issue_cycle, (int, np.integer)) or cmd.issue_cycle < 0:
            raise RejectedCommandError(f"bad issue cycle {cmd.issue_cycle!r}")

    def issue_command(self, cmd: DramCommand) -> DeviceResponse:
        self._validate(cmd)
        if cmd.issue_cycle < self.last_issue_cycle:
            raise ProtocolError(
                f"command at cycle {cmd.issue_cycle} issued after cycle {self.last_issue_cycle}"
            )
        st = self.banks[cmd.bank]
        st.status = self.bank_status(cmd.bank, cmd.issue_cycle)
        verdict = check_timing(cmd, st, self.timing)
        kind = cmd.kind
        effect = Effect.NONE
        data = None
        row_for_trace = None

        if kind is CommandKind.ACT:
            if st.open_row is not None:
                raise ProtocolError(f"ACT to bank {cmd.bank} with row {st.open_row} still open")
            effect = self._activate(st, cmd, verdict)
            row_for_trace = cmd.row
        elif kind is CommandKind.PRE:
            row_for_trace = st.open_row
            if st.open_row is not None:
                self._rows[(cmd.bank, st.open_row)] = st.rowbuffer.copy()
                since_act = cmd.issue_cycle - st.last_act_cycle
                st.early_pre = (
                    since_act < self.timing.tRAS and since_act <= self.config.t_ras_max_cycles
                )
                st.closed_row = st.open_row
                st.open_row = None
                st.last_pre_cycle = cmd.issue_cycle
                st.status = BankStatus.PRECHARGING
        elif kind is CommandKind.RD or kind is CommandKind.WR:
            if st.open_row is None:
                raise ProtocolError(f"{kind.value} to precharged bank {cmd.bank}")
            row_for_trace = st.open_row
            st.last_rw_cycle = cmd.issue_cycle
            if kind is CommandKind.RD:
                data = int(st.rowbuffer[cmd.column])
                if not verdict.ok:
                    data = self._weak_read(cmd.bank, st.open_row, cmd.column, data)
                    effect = Effect.WEAK_READ
            else:
                st.rowbuffer[cmd.column] = int(cmd.data) & self.word_mask
                st.last_wr_cycle = cmd.issue_cycle
        # REF and NOP change nothing

        self.last_issue_cycle = cmd.issue_cycle
        self.stats["commands"] += 1
        if not verdict.ok:
            self.stats["violations"] += 1
        if effect is Effect.MULTI_ROW_ACT:
            self.stats["multi_row_act"] += 1
        elif effect is Effect.WEAK_READ:
            self.stats["weak_reads"] += 1
        if self.trace is not None:
            self.trace.append(TraceRecord(
                cmd.issue_cycle, kind.value, cmd.bank, row_for_trace,
                cmd.column if kind in (CommandKind.RD, CommandKind.WR) else None,
                str(verdict), effect.value,
            ))

        if kind is CommandKind.RD:
            return DeviceResponse(ResponseKind.DATA, data, effect, verdict)
        if not verdict.ok:
            return DeviceResponse(ResponseKind.TIMING_FAULT, None, effect, verdict)
        return DeviceResponse(ResponseKind.DONE, None, effect, verdict)

    def _activate(self, st: BankState, cmd: DramCommand, verdict: TimingVerdict) -> Effect:
        bank, dst = cmd.bank, cmd.row
        since_pre = None if st.last_pre_cycle is None else cmd.issue_cycle - st.last_pre_cycle
        multi = (
            verdict.param == "tRP"
            and st.early_pre
            and st.closed_row is not None
            and since_pre <= self.config.t_rp_max_cycles
        )
        st.open_row = dst
        st.last_act_cycle = cmd.issue_cycle
        st.status = BankStatus.ACTIVATING
        st.early_pre = False
        if not multi:
            st.rowbuffer = self._cells(bank, dst).copy()
            return Effect.NONE
        src = st.closed_row
        g = self.geometry
        if g.subarray_of(src) == g.subarray_of(dst):
            # bitlines still hold src; activating dst latches them into dst's cells
            self._rows[(bank, dst)] = st.rowbuffer.copy()
        elif self.config.cross_subarray == "corrupt":
            rng = np.random.default_rng(
                [self.seed & MASK64, _CORRUPT_STREAM_TAG, bank, dst, self._corruptions]
            )
            self._corruptions += 1
            garbage = self.random_row(rng)
            self._rows[(bank, dst)] = garbage
            st.rowbuffer = garbage.copy()
        else:
            st.rowbuffer = self._cells(bank, dst).copy()
        return Effect.MULTI_ROW_ACT

    def _weak_read(self, bank: int, row: int, col: int, word: int) -> int:
        w = self.geometry.word_bits
        counters = self._weak_counters
        for bit, p in self.bias.word_profile(bank, row, col):
            cell = col * w + bit
            key = (bank, row, cell)
            n = counters.get(key, 0)
            counters[key] = n + 1
            if prf_uniform(self.seed, bank, row, cell, n) < p:
                word ^= 1 << bit
        return word

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(TRACE_HEADER + "\n")
            for rec in self.trace or ():
                fh.write(rec.to_csv() + "\n")


def words_to_bits(words: np.ndarray, word_bits: int = 64) -> np.ndarray:
    """Expand column words into a bit vector; bit i is bit (i % w) of word i // w."""
    words = np.asarray(words, dtype=np.uint64)
    shifts = np.arange(word_bits, dtype=np.uint64)
    return ((words[:, None] >> shifts) & np.uint64(1)).astype(np.uint8).ravel()


def bits_to_words(bits: np.ndarray, word_bits: int = 64) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint64).reshape(-1, word_bits)
    shifts = np.arange(word_bits, dtype=np.uint64)
    return np.bitwise_or.reduce(bits << shifts, axis=1)
