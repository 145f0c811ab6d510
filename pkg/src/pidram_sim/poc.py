"""PiM Operations Controller: memory-mapped registers and the Start/Ack/Finish handshake.

Register map (byte offsets, 64-bit little-endian registers):

    0x00  INSTR   opcode[63:56] | operand_a[55:28] | operand_b[27:0]
    0x08  FLAG    bit0 START, bit1 ACK, bit2 FINISH
    0x10  DATA    random bits (low bits first) or an error code

Operations run to completion inside the controller as soon as START is
accepted; what the host sees is governed by time. Each operation has three
instants (accepted, controller started, last command issued) and every load
reports the flags as of the load's completion cycle.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

from .controller import ControllerError, MemoryController, PimKind, PimOpRequest
from .device import DramError

OPERAND_BITS = 28
OPERAND_MASK = (1 << OPERAND_BITS) - 1
MAX_RAND_BITS = 64

ERR_UNKNOWN_OPCODE = 0xDEAD_0001
ERR_BAD_OPERAND = 0xDEAD_0002
ERR_NOT_CHARACTERIZED = 0xDEAD_0003
ERROR_CODES = frozenset({ERR_UNKNOWN_OPCODE, ERR_BAD_OPERAND, ERR_NOT_CHARACTERIZED})


class PocRegister(enum.IntEnum):
    INSTR = 0x00
    FLAG = 0x08
    DATA = 0x10


class Flag(enum.IntFlag):
    START = 1
    ACK = 2
    FINISH = 4


class Opcode(enum.IntEnum):
    RC_COPY = 0x01
    RC_INIT = 0x02
    DR_RAND = 0x03


_KIND_OF = {Opcode.RC_COPY: PimKind.RC_COPY, Opcode.RC_INIT: PimKind.RC_INIT,
            Opcode.DR_RAND: PimKind.DR_RAND}


@dataclass(frozen=True)
class PimInstruction:
    opcode: int
    operand_a: int = 0
    operand_b: int = 0

    def encode(self) -> int:
        if not 0 <= self.opcode <= 0xFF:
            raise ValueError(f"opcode {self.opcode} does not fit 8 bits")
        for v in (self.operand_a, self.operand_b):
            if not 0 <= v <= OPERAND_MASK:
                raise ValueError(f"operand {v} does not fit {OPERAND_BITS} bits")
        return (self.opcode << 56) | (self.operand_a << OPERAND_BITS) | self.operand_b

    @classmethod
    def decode(cls, word: int) -> PimInstruction:
        return cls((word >> 56) & 0xFF, (word >> OPERAND_BITS) & OPERAND_MASK, word & OPERAND_MASK)


@dataclass(frozen=True)
class FlagEvent:
    cycle: int
    flags: Flag
    op_index: int


@dataclass
class _Flight:
    accepted: int
    ack_at: int
    finish_at: int
    data: int | None  # committed to DATA at finish_at


class Poc:
    def __init__(self, controller: MemoryController, dispatch_cycles: int = 0):
        self.controller = controller
        self.dispatch_cycles = dispatch_cycles
        rows_per_bank = controller.device.geometry.rows_per_bank
        self._rows_per_bank = rows_per_bank
        self._n_rows = rows_per_bank * controller.device.geometry.banks
        self.instruction = 0
        self._data = 0
        self._flight: _Flight | None = None
        self.flag_trace: list[FlagEvent] = []
        self.accepted = 0
        self.ignored_starts = 0

    def row_id(self, bank: int, row: int) -> int:
        return bank * self._rows_per_bank + row

    def _row(self, row_id: int) -> tuple[int, int]:
        if not 0 <= row_id < self._n_rows:
            raise ValueError(f"row id {row_id} beyond device capacity")
        return divmod(row_id, self._rows_per_bank)

    def _flags_at(self, t: int) -> Flag:
        f = self._flight
        if f is None:
            return Flag(0)
        if t < f.ack_at:
            return Flag.START
        if t < f.finish_at:
            return Flag.ACK
        return Flag.ACK | Flag.FINISH

    def _data_at(self, t: int) -> int:
        f = self._flight
        if f is not None and f.data is not None and t >= f.finish_at:
            return f.data
        return self._data

    def in_flight(self, t: int) -> bool:
        f = self._flight
        return f is not None and t < f.finish_at

    def mmio_load(self, reg: PocRegister, at: int) -> int:
        reg = PocRegister(reg)
        if reg is PocRegister.INSTR:
            return self.instruction
        if reg is PocRegister.FLAG:
            return int(self._flags_at(at))
        return self._data_at(at)

    def mmio_store(self, reg: PocRegister, value: int, at: int) -> None:
        reg = PocRegister(reg)
        value &= (1 << 64) - 1
        if reg is PocRegister.INSTR:
            self.instruction = value
        elif reg is PocRegister.DATA:
            self._data = value
        elif value & Flag.START:
            if self.in_flight(at):
                self.ignored_starts += 1
                return
            self._start(at)

    # byte-offset access, as seen on the bus
    def load(self, offset: int, at: int) -> bytes:
        return self.mmio_load(PocRegister(offset), at).to_bytes(8, "little")

    def store(self, offset: int, raw: bytes, at: int) -> None:
        self.mmio_store(PocRegister(offset), int.from_bytes(raw, "little"), at)

    def _start(self, at: int) -> None:
        # commit the previous operation's data before FINISH is cleared
        self._data = self._data_at(at)
        op_index = self.accepted
        self.accepted += 1
        self.flag_trace.append(FlagEvent(at, Flag.START, op_index))
        try:
            op = self._decode(PimInstruction.decode(self.instruction))
            result = self.controller.execute(op, not_before=at + self.dispatch_cycles)
        except _PocError as e:
            self._finish(_Flight(at, at, at, e.code), op_index)
            return
        except (ControllerError, DramError, ValueError):
            self._finish(_Flight(at, at, at, ERR_BAD_OPERAND), op_index)
            return
        data = None
        if op.kind is PimKind.DR_RAND:
            data = 0
            for i, b in enumerate(result.bits):
                data |= b << i
        self._finish(_Flight(at, result.timing.start_cycle, result.timing.last_command_cycle,
                             data), op_index)

    def _finish(self, flight: _Flight, op_index: int) -> None:
        self._flight = flight
        self.flag_trace.append(FlagEvent(flight.ack_at, Flag.ACK, op_index))
        self.flag_trace.append(FlagEvent(flight.finish_at, Flag.ACK | Flag.FINISH, op_index))

    def _decode(self, ins: PimInstruction) -> PimOpRequest:
        if ins.opcode not in _KIND_OF.keys():
            raise _PocError(ERR_UNKNOWN_OPCODE)
        kind = _KIND_OF[Opcode(ins.opcode)]
        if kind is PimKind.DR_RAND:
            if not 0 < ins.operand_b <= MAX_RAND_BITS:
                raise _PocError(ERR_BAD_OPERAND)
            if not self.controller.rng_cells and self.controller.config.fill_policy == "on_demand":
                raise _PocError(ERR_NOT_CHARACTERIZED)
            return PimOpRequest(kind, n_bits=ins.operand_b)
        try:
            src, dst = self._row(ins.operand_a), self._row(ins.operand_b)
        except ValueError:
            raise _PocError(ERR_BAD_OPERAND) from None
        return PimOpRequest(kind, src_row=src, dst_row=dst)


class _PocError(Exception):
    def __init__(self, code: int):
        super().__init__(hex(code))
        self.code = code


def check_flag_trace(events: list[FlagEvent]) -> list[str]:
    """Problems with START -> ACK -> FINISH ordering; empty when the trace is clean."""
    problems = []
    by_op: dict[int, list[FlagEvent]] = {}
    for e in events:
        by_op.setdefault(e.op_index, []).append(e)
    prev_finish = None
    for idx in sorted(by_op):
        evs = by_op[idx]
        seq = [e.flags for e in evs]
        if seq != [Flag.START, Flag.ACK, Flag.ACK | Flag.FINISH]:
            problems.append(f"op {idx}: flag sequence {[int(f) for f in seq]}")
            continue
        s, a, f = (e.cycle for e in evs)
        if not s <= a <= f:
            problems.append(f"op {idx}: cycles out of order {s} {a} {f}")
        if Flag.START in evs[1].flags:
            problems.append(f"op {idx}: START still set with ACK")
        if prev_finish is not None and s < prev_finish:
            problems.append(f"op {idx}: accepted at {s} before previous FINISH at {prev_finish}")
        prev_finish = f
    return problems
