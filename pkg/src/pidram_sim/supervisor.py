"""Memory management for in-DRAM copy: subarray discovery and aligned allocation.

Copy and initialization only work between rows of one subarray, and nothing
in a DRAM datasheet says where subarrays begin. The supervisor finds out by
trying copies and checking whether the data arrived, then hands out operand
rows that are guaranteed to share a subarray.
"""
from __future__ import annotations

import bisect
import enum
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .addrmap import AddressMap, DramAddr
from .config import CoherenceModel, DeviceGeometry
from .controller import MemoryController

VA_BASE = 0x4000_0000_0000


class SupervisorError(Exception):
    pass


class AllocationError(SupervisorError):
    pass


class TranslationError(SupervisorError, ValueError):
    pass


class Purpose(enum.Enum):
    OPERAND_PAIR = "OPERAND_PAIR"
    SINGLE = "SINGLE"
    ZERO_ROW = "ZERO_ROW"


class CoherenceMode(enum.Enum):
    NONE = "NONE"
    FLUSH_ALL_BLOCKS = "FLUSH_ALL_BLOCKS"


def coherence_cost(nbytes: int, mode: CoherenceMode, model: CoherenceModel) -> float:
    """Nanoseconds spent cleaning `nbytes` out of the caches before an in-DRAM op.

    Every block of the operand is queried whether cached or not, so the cost
    depends only on size.
    """
    if mode is CoherenceMode.NONE or nbytes <= 0:
        return 0.0
    blocks = math.ceil(nbytes / model.block_size_bytes)
    return blocks * model.flush_cost_per_block_ns


class SubarrayMap:
    """Per-bank partition of row indices into subarray intervals."""

    def __init__(self, intervals: dict[int, list[range]], rows_per_bank: int):
        self.rows_per_bank = rows_per_bank
        self.intervals = {b: sorted(iv, key=lambda r: r.start) for b, iv in intervals.items()}
        for bank, ivs in self.intervals.items():
            expect = 0
            for r in ivs:
                if r.start != expect or r.stop <= r.start or r.step != 1:
                    raise ValueError(f"bank {bank}: intervals do not partition the rows at {r}")
                expect = r.stop
            if expect != rows_per_bank:
                raise ValueError(f"bank {bank}: intervals end at {expect}, not {rows_per_bank}")
        self._starts = {b: [r.start for r in ivs] for b, ivs in self.intervals.items()}

    @classmethod
    def from_geometry(cls, g: DeviceGeometry) -> SubarrayMap:
        """Ground-truth map. For tests and for skipping discovery."""
        ivs = [range(s * g.rows_per_subarray, (s + 1) * g.rows_per_subarray)
               for s in range(g.subarrays_per_bank)]
        return cls({b: list(ivs) for b in range(g.banks)}, g.rows_per_bank)

    def subarray_of(self, bank: int, row: int) -> int:
        if not 0 <= row < self.rows_per_bank:
            raise ValueError(f"row {row} out of range")
        return bisect.bisect_right(self._starts[bank], row) - 1

    def interval(self, bank: int, subarray: int) -> range:
        return self.intervals[bank][subarray]

    def __eq__(self, other):
        return (isinstance(other, SubarrayMap) and self.rows_per_bank == other.rows_per_bank
                and self.intervals == other.intervals)

    def __repr__(self):
        counts = {b: len(v) for b, v in self.intervals.items()}
        return f"SubarrayMap(rows_per_bank={self.rows_per_bank}, subarrays={counts})"

    def to_text(self) -> str:
        lines = [f"# rows_per_bank {self.rows_per_bank}"]
        for bank in sorted(self.intervals):
            for r in self.intervals[bank]:
                lines.append(f"{bank}: {r.start}..{r.stop - 1}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> SubarrayMap:
        rows_per_bank = None
        ivs: dict[int, list[range]] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts[:1] == ["rows_per_bank"]:
                    rows_per_bank = int(parts[1])
                continue
            bank, span = line.split(":")
            lo, hi = span.strip().split("..")
            ivs.setdefault(int(bank), []).append(range(int(lo), int(hi) + 1))
        if rows_per_bank is None:
            rows_per_bank = max(r.stop for v in ivs.values() for r in v)
        return cls(ivs, rows_per_bank)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> SubarrayMap:
        return cls.from_text(Path(path).read_text())


@dataclass
class DiscoveryResult:
    map: SubarrayMap
    probes: dict[int, int]  # per bank

    @property
    def total_probes(self) -> int:
        return sum(self.probes.values())


def _probe_pattern(device, rng: np.random.Generator) -> np.ndarray:
    # a constant row could coincide with whatever the destination held
    while True:
        words = device.random_row(rng)
        if np.any(words != words[0]):
            return words


def discover_subarrays(
    controller: MemoryController,
    trials_per_boundary: int = 1,
    seed: int = 0,
    strategy: str = "binary",
    banks=None,
) -> DiscoveryResult:
    """Infer subarray boundaries from which in-DRAM copies succeed.

    For each bank, start at row 0 and search for the last row a copy from the
    anchor still reaches; that row closes one subarray and the next row becomes
    the new anchor. ``strategy="random"`` probes a uniformly random row of the
    undecided range instead of its midpoint. Each probe is repeated
    ``trials_per_boundary`` times and decided by majority. Every row a probe
    touches is restored afterwards.
    """
    if strategy not in ("binary", "random"):
        raise ValueError(f"unknown discovery strategy {strategy!r}")
    device = controller.device
    g = device.geometry
    rng = np.random.default_rng([seed, 0xD15C])
    R = g.rows_per_bank
    probes: dict[int, int] = {}
    intervals: dict[int, list[range]] = {}

    def same(bank: int, a: int, b: int) -> bool:
        votes = 0
        for _ in range(trials_per_boundary):
            controller.precharge(bank)
            saved_a, saved_b = device.peek_row(bank, a), device.peek_row(bank, b)
            pattern = _probe_pattern(device, rng)
            device.poke_row(bank, a, pattern)
            controller.exec_rowclone_copy((bank, a), (bank, b), controller.now)
            votes += bool(np.array_equal(device.peek_row(bank, b), pattern))
            device.poke_row(bank, a, saved_a)
            device.poke_row(bank, b, saved_b)
            probes[bank] += 1
        return 2 * votes > trials_per_boundary

    for bank in (range(g.banks) if banks is None else banks):
        probes[bank] = 0
        ivs = []
        anchor = 0
        while anchor < R:
            lo, hi = anchor, R  # lo: known same, hi: known different (or end)
            while hi - lo > 1:
                mid = (lo + hi) // 2 if strategy == "binary" else int(rng.integers(lo + 1, hi))
                if same(bank, anchor, mid):
                    lo = mid
                else:
                    hi = mid
            ivs.append(range(anchor, lo + 1))
            anchor = lo + 1
        intervals[bank] = ivs
    return DiscoveryResult(SubarrayMap(intervals, R), probes)


@dataclass
class Allocation:
    handle: int
    bank: int
    subarray: int
    rows: tuple[int, ...]
    purpose: Purpose
    # one virtual base per region: two for an operand pair, one otherwise
    vaddrs: tuple[int, ...] = ()
    regions: tuple[tuple[int, ...], ...] = ()

    @property
    def src(self) -> int:
        return self.vaddrs[0]

    @property
    def dst(self) -> int:
        return self.vaddrs[-1]

    @property
    def vaddr(self) -> int:
        return self.vaddrs[0]


@dataclass
class _Region:
    base: int
    alloc: Allocation
    rows: tuple[int, ...]


class Supervisor:
    def __init__(
        self,
        controller: MemoryController,
        address_map: AddressMap | None = None,
        subarray_map: SubarrayMap | None = None,
        coherence: CoherenceModel | None = None,
        placement: str = "first_fit",
        seed: int = 0,
    ):
        if placement not in ("first_fit", "random"):
            raise ValueError(f"unknown placement {placement!r}")
        self.controller = controller
        self.device = controller.device
        self.geometry = self.device.geometry
        self.address_map = address_map or controller.address_map
        self.coherence = coherence or CoherenceModel()
        self.placement = placement
        self._rng = np.random.default_rng([seed, 0xA11C])
        self.subarray_map: SubarrayMap | None = None
        self._handles = itertools.count(1)
        self._next_va = VA_BASE
        self._regions: list[_Region] = []
        self._region_bases: list[int] = []
        self.live: dict[int, Allocation] = {}
        self.zero_rows: dict[tuple[int, int], int] = {}
        self._free: dict[tuple[int, int], list[int]] = {}
        if subarray_map is not None:
            self.set_subarray_map(subarray_map)

    # -- discovery -----------------------------------------------------------

    def discover(self, trials_per_boundary: int = 1, seed: int = 0,
                 strategy: str = "binary") -> DiscoveryResult:
        result = discover_subarrays(self.controller, trials_per_boundary, seed, strategy)
        self.set_subarray_map(result.map)
        return result

    def set_subarray_map(self, smap: SubarrayMap) -> None:
        if self.live:
            raise SupervisorError("cannot replace the subarray map with live allocations")
        self.subarray_map = smap
        reserved = set()
        if self.controller.rng_row is not None:
            reserved.add(self.controller.rng_row)
        self._free = {}
        for bank, ivs in smap.intervals.items():
            for sa, r in enumerate(ivs):
                self._free[(bank, sa)] = [x for x in r if (bank, x) not in reserved]
        self.zero_rows = {}

    def reserve_row(self, bank: int, row: int) -> None:
        """Keep a row (e.g. the RNG row) out of the allocator."""
        if self.subarray_map is None:
            return
        key = (bank, self.subarray_map.subarray_of(bank, row))
        free = self._free.get(key, [])
        if row in free:
            free.remove(row)

    # -- allocation ----------------------------------------------------------

    def _candidates(self):
        keys = sorted(self._free)
        if self.placement == "random":
            order = self._rng.permutation(len(keys))
            keys = [keys[i] for i in order]
        return keys

    def _take(self, key, n: int) -> list[int]:
        free = self._free[key]
        if self.placement == "random":
            idx = sorted(self._rng.choice(len(free), size=n, replace=False).tolist())
        else:
            idx = list(range(n))
        taken = [free[i] for i in idx]
        for i in reversed(idx):
            del free[i]
        return taken

    def alloc_align(self, nbytes: int, purpose: Purpose = Purpose.OPERAND_PAIR) -> Allocation:
        """Row-aligned rows inside a single inferred subarray.

        OPERAND_PAIR gives two regions of ceil(nbytes / row) rows each; row i
        of one region can be copied to row i of the other. The subarray's
        zero row is reserved on first use.
        """
        if self.subarray_map is None:
            raise SupervisorError("no subarray map; run discovery or inject one first")
        if purpose is Purpose.ZERO_ROW:
            raise AllocationError("zero rows are reserved internally")
        if nbytes <= 0:
            raise AllocationError("allocation size must be positive")
        n = math.ceil(nbytes / self.geometry.row_bytes)
        regions = 2 if purpose is Purpose.OPERAND_PAIR else 1
        for key in self._candidates():
            need = regions * n + (key not in self.zero_rows)
            if len(self._free[key]) >= need:
                break
        else:
            raise AllocationError(f"no subarray has room for {regions} x {n} rows")
        bank, sa = key
        if key not in self.zero_rows:
            zrow = self._free[key].pop(0)
            self.device.poke_row(bank, zrow, np.zeros(self.geometry.columns_per_row, np.uint64))
            self.zero_rows[key] = zrow
        rows = self._take(key, regions * n)
        region_rows = tuple(tuple(rows[i * n:(i + 1) * n]) for i in range(regions))
        alloc = Allocation(next(self._handles), bank, sa, tuple(rows), purpose)
        vaddrs = []
        for rr in region_rows:
            base = self._next_va
            # one unmapped guard row between regions
            self._next_va += (len(rr) + 1) * self.geometry.row_bytes
            i = bisect.bisect(self._region_bases, base)
            self._region_bases.insert(i, base)
            self._regions.insert(i, _Region(base, alloc, rr))
            vaddrs.append(base)
        alloc.vaddrs = tuple(vaddrs)
        alloc.regions = region_rows
        self.live[alloc.handle] = alloc
        return alloc

    def free(self, alloc: Allocation) -> None:
        if self.live.pop(alloc.handle, None) is None:
            raise AllocationError(f"allocation {alloc.handle} is not live")
        keep = [(b, r) for b, r in zip(self._region_bases, self._regions) if r.alloc is not alloc]
        self._region_bases = [b for b, _ in keep]
        self._regions = [r for _, r in keep]
        free = self._free[(alloc.bank, alloc.subarray)]
        free.extend(alloc.rows)
        free.sort()

    def free_rows(self) -> int:
        return sum(len(v) for v in self._free.values())

    def zero_row(self, bank: int, subarray: int) -> int:
        try:
            return self.zero_rows[(bank, subarray)]
        except KeyError:
            raise AllocationError(f"no zero row reserved in bank {bank} subarray {subarray}") from None

    # -- translation ---------------------------------------------------------

    def resolve(self, vaddr: int) -> tuple[Allocation, int, int, int]:
        """(allocation, bank, row, byte offset within the row) for a virtual address."""
        i = bisect.bisect_right(self._region_bases, vaddr) - 1
        if i >= 0:
            reg = self._regions[i]
            k, off = divmod(vaddr - reg.base, self.geometry.row_bytes)
            if k < len(reg.rows):
                return reg.alloc, reg.alloc.bank, reg.rows[k], off
        raise TranslationError(f"virtual address {vaddr:#x} is not allocated")

    def region_rows(self, vaddr: int) -> tuple[int, ...]:
        """Rows from `vaddr`'s row to the end of its region."""
        i = bisect.bisect_right(self._region_bases, vaddr) - 1
        alloc, bank, row, _ = self.resolve(vaddr)
        rows = self._regions[i].rows
        return rows[rows.index(row):]

    def translate(self, vaddr: int) -> int:
        _, bank, row, off = self.resolve(vaddr)
        col, byte = divmod(off, self.geometry.word_bytes)
        return self.address_map.dram_to_phys(bank, row, col) + byte

    def phys_to_dram(self, addr: int) -> DramAddr:
        return self.address_map.phys_to_dram(addr)

    def dram_to_phys(self, bank: int, row: int, col: int) -> int:
        return self.address_map.dram_to_phys(bank, row, col)

    def coherence_cost(self, nbytes: int, mode: CoherenceMode) -> float:
        return coherence_cost(nbytes, mode, self.coherence)

