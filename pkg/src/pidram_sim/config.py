"""Parameter records for every layer of the simulated stack, plus YAML I/O.

All records are frozen dataclasses so a config can be shared between stack
instances without anyone mutating it underneath the others.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceGeometry:
    banks: int = 8
    subarrays_per_bank: int = 8
    rows_per_subarray: int = 512
    columns_per_row: int = 1024
    word_bits: int = 64

    def __post_init__(self):
        for name in ("banks", "subarrays_per_bank", "rows_per_subarray", "columns_per_row"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 8 <= self.word_bits <= 64 or self.word_bits % 8:
            raise ConfigError("word_bits must be a multiple of 8 in [8, 64]")

    @property
    def rows_per_bank(self) -> int:
        return self.subarrays_per_bank * self.rows_per_subarray

    @property
    def word_bytes(self) -> int:
        return self.word_bits // 8

    @property
    def row_bits(self) -> int:
        return self.columns_per_row * self.word_bits

    @property
    def row_bytes(self) -> int:
        return self.columns_per_row * self.word_bytes

    @property
    def capacity_bytes(self) -> int:
        return self.banks * self.rows_per_bank * self.row_bytes

    def subarray_of(self, row: int) -> int:
        """Ground-truth subarray index of `row`. Only the device may use this."""
        return row // self.rows_per_subarray


@dataclass(frozen=True)
class TimingParams:
    """DDR3-800 style constraints, in device clock ticks."""

    tRCD: int = 6
    tRAS: int = 15
    tRP: int = 6
    tWR: int = 6
    tCL: int = 6
    tRC: int = 21
    clock_period: float = 2.5  # ns per tick

    def __post_init__(self):
        for name in ("tRCD", "tRAS", "tRP", "tWR", "tCL", "tRC"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.clock_period <= 0:
            raise ConfigError("clock_period must be > 0")
        if self.tRC < self.tRAS + self.tRP:
            raise ConfigError("tRC must be >= tRAS + tRP")

    def to_cycles(self, ns: float) -> int:
        # tolerate float noise such as 482.0000001 / 2.5
        return math.ceil(ns / self.clock_period - 1e-9)

    def to_ns(self, cycles: float) -> float:
        return cycles * self.clock_period


@dataclass(frozen=True)
class BiasParams:
    """Activation-failure profile. Explicit records override generated cells."""

    f_rng: float = 0.001
    f_always: float = 0.01
    rng_p_range: tuple[float, float] = (0.45, 0.55)
    always_p_range: tuple[float, float] = (0.9, 1.0)
    temperature_scale: float = 1.0
    explicit: tuple[tuple[int, int, int, float], ...] = ()

    def __post_init__(self):
        if not (0 <= self.f_rng and 0 <= self.f_always and self.f_rng + self.f_always <= 1):
            raise ConfigError("cell fractions must be non-negative and sum to <= 1")
        if self.temperature_scale <= 0:
            raise ConfigError("temperature_scale must be > 0")
        for lo, hi in (self.rng_p_range, self.always_p_range):
            if not 0 <= lo <= hi <= 1:
                raise ConfigError("probability ranges must lie in [0, 1]")
        for rec in self.explicit:
            if not 0.0 <= rec[3] <= 1.0:
                raise ConfigError(f"bias record {rec} has p outside [0, 1]")


@dataclass(frozen=True)
class DeviceConfig:
    # ACT->PRE and PRE->ACT intervals at or below these trigger multi-row activation
    t_ras_max_cycles: int = 3
    t_rp_max_cycles: int = 3
    cross_subarray: str = "corrupt"  # or "unchanged"
    ref_cycles: int = 1

    def __post_init__(self):
        if self.cross_subarray not in ("corrupt", "unchanged"):
            raise ConfigError("cross_subarray must be 'corrupt' or 'unchanged'")


@dataclass(frozen=True)
class ControllerConfig:
    rng_capacity: int = 1024
    fill_policy: str = "on_demand"  # or "background"
    rc_act_pre_cycles: int = 3
    rc_pre_act_cycles: int = 3
    drange_trcd_cycles: int = 2
    rng_cells_per_access: int = 4
    rng_bank: int = 0
    characterization_rows: int = 4096

    def __post_init__(self):
        if self.fill_policy not in ("on_demand", "background"):
            raise ConfigError("fill_policy must be 'on_demand' or 'background'")
        if self.rng_capacity < self.rng_cells_per_access:
            raise ConfigError("rng_capacity must hold at least one access worth of bits")


@dataclass(frozen=True)
class AddressMapConfig:
    # field order from the least significant end, above the byte-in-word bits
    order: tuple[str, ...] = ("col", "bank", "row")
    # bank bit i is XORed with parity(row & bank_xor_masks[i])
    bank_xor_masks: tuple[int, ...] = ()

    def __post_init__(self):
        if sorted(self.order) != ["bank", "col", "row"]:
            raise ConfigError("order must be a permutation of col, bank, row")


@dataclass(frozen=True)
class CoherenceModel:
    flush_cost_per_block_ns: float = 0.0
    block_size_bytes: int = 64
    # unused by the flush-every-block model; kept for partial-flush variants
    dirty_fraction: float = 1.0

    def __post_init__(self):
        if self.flush_cost_per_block_ns < 0:
            raise ConfigError("flush cost must be >= 0")
        b = self.block_size_bytes
        if b < 1 or b & (b - 1):
            raise ConfigError("block_size_bytes must be a power of two")
        if not 0.0 <= self.dirty_fraction <= 1.0:
            raise ConfigError("dirty_fraction must be in [0, 1]")


# Frozen output of bench.calibrate() on the default device/timing config.
# tests/test_bench.py re-runs the calibration and checks these still match.
CALIBRATED_POC_DISPATCH_NS = 137.5
CALIBRATED_CPU_COPY_BYTES_PER_NS = 0.31784276638052283
CALIBRATED_CPU_INIT_BYTES_PER_NS = 0.4246264691780378
CALIBRATED_COPY_FLUSH_NS_PER_BLOCK = 12.092385488013699
CALIBRATED_INIT_FLUSH_NS_PER_BLOCK = 10.262741815476192


@dataclass(frozen=True)
class CostModel:
    cpu_copy_bytes_per_ns: float = CALIBRATED_CPU_COPY_BYTES_PER_NS
    cpu_init_bytes_per_ns: float = CALIBRATED_CPU_INIT_BYTES_PER_NS
    mmio_cost_ns: float = 10.0
    poll_interval_cycles: int = 1
    poc_dispatch_ns: float = CALIBRATED_POC_DISPATCH_NS
    alloc_lookup_ns: float = 0.0
    drange_period_ns: float = 482.0
    coherence: CoherenceModel = CoherenceModel(CALIBRATED_COPY_FLUSH_NS_PER_BLOCK)
    init_coherence: CoherenceModel = CoherenceModel(CALIBRATED_INIT_FLUSH_NS_PER_BLOCK)

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and v < 0:
                raise ConfigError(f"{f.name} must be >= 0")


@dataclass(frozen=True)
class SimConfig:
    seed: int = 1
    geometry: DeviceGeometry = field(default_factory=DeviceGeometry)
    timing: TimingParams = field(default_factory=TimingParams)
    device: DeviceConfig = field(default_factory=DeviceConfig)
    bias: BiasParams = field(default_factory=BiasParams)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    address_map: AddressMapConfig = field(default_factory=AddressMapConfig)
    cost: CostModel = field(default_factory=CostModel)

    def replace(self, **sections: Any) -> SimConfig:
        """Copy with whole sections or per-section overrides.

        ``cfg.replace(seed=3, cost={"drange_period_ns": 964})`` keeps every
        other cost field.
        """
        updates = {}
        for name, value in sections.items():
            current = getattr(self, name)
            if isinstance(value, dict):
                value = dataclasses.replace(current, **value)
            updates[name] = value
        return dataclasses.replace(self, **updates)


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _build(cls, data: dict | None):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section for {cls.__name__} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        if cls is CostModel and name in ("coherence", "init_coherence"):
            kwargs[name] = _build(CoherenceModel, value)
        else:
            kwargs[name] = _tuplify(value)
    return cls(**kwargs)


_SECTIONS = {
    "geometry": DeviceGeometry,
    "timing": TimingParams,
    "device": DeviceConfig,
    "bias": BiasParams,
    "controller": ControllerConfig,
    "address_map": AddressMapConfig,
    "cost": CostModel,
}


def config_from_dict(data: dict) -> SimConfig:
    data = dict(data or {})
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {name: _build(cls, data.get(name)) for name, cls in _SECTIONS.items()}
    return SimConfig(seed=int(data.get("seed", 1)), **kwargs)


def config_to_dict(cfg: SimConfig) -> dict:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        return v

    out: dict[str, Any] = {"seed": cfg.seed}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(cfg, name))
        out[name] = {k: plain(v) for k, v in section.items()}
    return out


def load_config(path: str | Path) -> SimConfig:
    with open(path) as fh:
        return config_from_dict(yaml.safe_load(fh) or {})


def dump_config(cfg: SimConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)
