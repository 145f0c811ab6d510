"""Wire device, controller, POC, library and supervisor together from one config."""
from __future__ import annotations

from dataclasses import dataclass

from .addrmap import AddressMap
from .config import SimConfig
from .controller import MemoryController
from .device import DramDevice
from .pimolib import MmioBus, PimLib
from .poc import Poc
from .supervisor import SubarrayMap, Supervisor


@dataclass
class Stack:
    config: SimConfig
    device: DramDevice
    controller: MemoryController
    poc: Poc
    bus: MmioBus
    supervisor: Supervisor
    lib: PimLib

    def ns(self, cycles: int) -> float:
        return self.config.timing.to_ns(cycles)


def build_stack(
    config: SimConfig | None = None,
    *,
    trace: bool = True,
    characterize: bool = True,
    subarray_map: SubarrayMap | str | None = "ground_truth",
    placement: str = "first_fit",
    record_mmio: bool = False,
) -> Stack:
    """Assemble a fresh stack.

    `subarray_map` is a map, "ground_truth" (inject the device's layout),
    "discover" (run RowClone probing) or None (leave the allocator unusable).
    """
    cfg = config or SimConfig()
    cost = cfg.cost
    timing = cfg.timing
    device = DramDevice(cfg.geometry, timing, cfg.bias, cfg.seed, cfg.device, trace=trace)
    amap = AddressMap(cfg.geometry, cfg.address_map)
    controller = MemoryController(device, amap, cfg.controller, cost.drange_period_ns)
    if characterize:
        controller.characterize()
    poc = Poc(controller, dispatch_cycles=timing.to_cycles(cost.poc_dispatch_ns))
    bus = MmioBus(poc, timing.to_cycles(cost.mmio_cost_ns), cost.poll_interval_cycles,
                  record=record_mmio)
    supervisor = Supervisor(controller, amap, coherence=cost.coherence, placement=placement,
                            seed=cfg.seed)
    if isinstance(subarray_map, SubarrayMap):
        supervisor.set_subarray_map(subarray_map)
    elif subarray_map == "ground_truth":
        supervisor.set_subarray_map(SubarrayMap.from_geometry(cfg.geometry))
    elif subarray_map == "discover":
        supervisor.discover(seed=cfg.seed)
    elif subarray_map is not None:
        raise ValueError(f"unknown subarray_map option {subarray_map!r}")
    lib = PimLib(bus, supervisor)
    return Stack(cfg, device, controller, poc, bus, supervisor, lib)
