"""Host-side PiM library: every call is loads and stores to the POC registers.

A call (i) stores the instruction, (ii) stores START to the flag register,
(iii) polls the flag register until ACK or FINISH shows up, and for random
numbers (iv) loads the data register. Copy and initialization leave their
result in DRAM, so they stop after (iii).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .controller import MemKind, MemRequest
from .poc import ERROR_CODES, Flag, Opcode, PimInstruction, Poc, PocRegister
from .supervisor import Supervisor, TranslationError

# DR_RAND chunks stay below 16 bits so no random value can look like an error code
RAND_CHUNK_BITS = 16
DEFAULT_POLL_BUDGET = 1 << 32


class PimPreconditionError(ValueError):
    pass


class PimOperationError(RuntimeError):
    pass


class BlockingMode(enum.Enum):
    ACK = "ACK"
    FINISH = "FINISH"


class PollResult(enum.Enum):
    SET = "SET"
    TIMEOUT = "TIMEOUT"


@dataclass(frozen=True)
class MmioAccess:
    op: str  # "load" or "store"
    reg: PocRegister
    value: int
    cycle: int


class MmioBus:
    """Uncached load/store path from the core to the POC, `cost_cycles` per access."""

    def __init__(self, poc: Poc, cost_cycles: int, poll_interval_cycles: int = 1,
                 record: bool = False):
        self.poc = poc
        self.cost_cycles = cost_cycles
        self.poll_interval_cycles = poll_interval_cycles
        self.time = 0
        self.log: list[MmioAccess] | None = [] if record else None

    def store(self, reg: PocRegister, value: int) -> None:
        self.time += self.cost_cycles
        self.poc.mmio_store(reg, value, self.time)
        if self.log is not None:
            self.log.append(MmioAccess("store", reg, value, self.time))

    def load(self, reg: PocRegister) -> int:
        self.time += self.cost_cycles
        value = self.poc.mmio_load(reg, self.time)
        if self.log is not None:
            self.log.append(MmioAccess("load", reg, value, self.time))
        return value

    def wait(self, cycles: int) -> None:
        self.time += cycles


class PimLib:
    def __init__(self, bus: MmioBus, supervisor: Supervisor):
        self.bus = bus
        self.supervisor = supervisor
        self.poc = bus.poc
        self.controller = supervisor.controller
        self.row_bytes = supervisor.geometry.row_bytes

    @property
    def time(self) -> int:
        return self.bus.time

    def poll_flag(self, flag: Flag, timeout_cycles: int = DEFAULT_POLL_BUDGET) -> PollResult:
        """Load FLAG until `flag` is set or `timeout_cycles` have passed (at least one load)."""
        start = self.bus.time
        while True:
            if self.bus.load(PocRegister.FLAG) & flag:
                return PollResult.SET
            if self.bus.time - start >= timeout_cycles:
                return PollResult.TIMEOUT
            self.bus.wait(self.bus.poll_interval_cycles)

    def _run(self, ins: PimInstruction, wait_on: Flag) -> None:
        self.bus.store(PocRegister.INSTR, ins.encode())
        self.bus.store(PocRegister.FLAG, Flag.START)
        if self.poll_flag(wait_on) is PollResult.TIMEOUT:
            raise PimOperationError(f"timed out waiting for {wait_on!r}")

    def _rows(self, vaddr: int, n: int, what: str) -> tuple[int, int, list[int]]:
        try:
            _, bank, _, off = self.supervisor.resolve(vaddr)
        except TranslationError as e:
            raise PimPreconditionError(f"{what}: {e}") from None
        if off:
            raise PimPreconditionError(f"{what} {vaddr:#x} is not row-aligned")
        rows = list(self.supervisor.region_rows(vaddr)[:n])
        if len(rows) < n:
            raise PimPreconditionError(f"{what} region is shorter than {n} rows")
        smap = self.supervisor.subarray_map
        subarrays = {smap.subarray_of(bank, r) for r in rows}
        if len(subarrays) != 1:
            raise PimPreconditionError(f"{what} rows span several subarrays")
        return bank, subarrays.pop(), rows

    def _n_rows(self, nbytes: int | None) -> int:
        return 1 if nbytes is None else max(1, math.ceil(nbytes / self.row_bytes))

    def _issue_rows(self, opcode: Opcode, pairs, mode: BlockingMode) -> None:
        # START is ignored while an op is in flight, so every op but the last
        # must be waited out to FINISH
        last = len(pairs) - 1
        for i, (a, b) in enumerate(pairs):
            wait = Flag.FINISH if i < last or mode is BlockingMode.FINISH else Flag.ACK
            self._run(PimInstruction(opcode, a, b), wait)

    def pim_copy(self, src: int, dst: int, mode: BlockingMode = BlockingMode.FINISH,
                 nbytes: int | None = None) -> bool:
        """Copy whole rows from `src` to `dst` inside DRAM (one row unless `nbytes` says more)."""
        n = self._n_rows(nbytes)
        sbank, ssa, srows = self._rows(src, n, "source")
        dbank, dsa, drows = self._rows(dst, n, "destination")
        if (sbank, ssa) != (dbank, dsa):
            raise PimPreconditionError("source and destination are not in the same subarray")
        pairs = [(self.poc.row_id(sbank, s), self.poc.row_id(dbank, d))
                 for s, d in zip(srows, drows)]
        self._issue_rows(Opcode.RC_COPY, pairs, mode)
        return True

    def pim_init(self, dst: int, mode: BlockingMode = BlockingMode.FINISH,
                 nbytes: int | None = None) -> bool:
        """Zero whole rows at `dst` by copying the subarray's reserved zero row."""
        n = self._n_rows(nbytes)
        bank, sa, rows = self._rows(dst, n, "destination")
        zrow = self.supervisor.zero_row(bank, sa)
        pairs = [(self.poc.row_id(bank, zrow), self.poc.row_id(bank, r)) for r in rows]
        self._issue_rows(Opcode.RC_INIT, pairs, mode)
        return True

    def rand_dram(self, n_bits: int) -> list[int]:
        if n_bits < 0:
            raise PimPreconditionError("n_bits must be >= 0")
        if n_bits and not self.controller.rng_cells:
            raise PimPreconditionError("no characterized RNG cells; characterize the device first")
        out: list[int] = []
        while len(out) < n_bits:
            chunk = min(RAND_CHUNK_BITS, n_bits - len(out))
            self._run(PimInstruction(Opcode.DR_RAND, 0, chunk), Flag.FINISH)
            value = self.bus.load(PocRegister.DATA)
            if value in ERROR_CODES:
                raise PimOperationError(f"POC reported error {value:#x}")
            out.extend((value >> i) & 1 for i in range(chunk))
        return out

    # conventional accesses, for checking results through the normal read path

    def _access(self, req: MemRequest):
        ctrl = self.controller
        data = ctrl.schedule_access(req, at=self.bus.time)
        self.bus.time = max(self.bus.time, ctrl.now)
        return data

    def load_word(self, vaddr: int) -> int:
        return self._access(MemRequest(MemKind.READ, self.supervisor.translate(vaddr)))

    def store_word(self, vaddr: int, value: int) -> None:
        self._access(MemRequest(MemKind.WRITE, self.supervisor.translate(vaddr), value))
