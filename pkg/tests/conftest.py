import numpy as np
import pytest

from pidram_sim.config import DeviceGeometry, SimConfig, TimingParams
from pidram_sim.device import DramDevice

SMALL_GEOMETRY = DeviceGeometry(banks=2, subarrays_per_bank=4, rows_per_subarray=64,
                                columns_per_row=128)


@pytest.fixture
def small_config() -> SimConfig:
    return SimConfig(seed=7, geometry=SMALL_GEOMETRY)


@pytest.fixture
def device() -> DramDevice:
    return DramDevice(SMALL_GEOMETRY, TimingParams(), seed=3)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


# acceptance results, echoed in the terminal summary so they survive output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
