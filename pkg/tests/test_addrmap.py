import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pidram_sim.addrmap import AddressError, AddressMap, DramAddr
from pidram_sim.config import AddressMapConfig, ConfigError, DeviceGeometry

from conftest import SMALL_GEOMETRY

G = DeviceGeometry()
ORDERS = [("col", "bank", "row"), ("bank", "col", "row"), ("row", "col", "bank")]


def test_identity_config_origin():
    assert AddressMap(G).phys_to_dram(0) == DramAddr(0, 0, 0)


def test_default_layout_strides():
    m = AddressMap(G)
    wb = G.word_bytes
    assert m.phys_to_dram(wb) == (0, 0, 1)
    assert m.phys_to_dram(wb - 1) == (0, 0, 0)  # bytes inside one word share coordinates
    assert m.phys_to_dram(G.row_bytes) == (1, 0, 0)
    assert m.phys_to_dram(G.row_bytes * G.banks) == (0, 1, 0)


@pytest.mark.parametrize("order", ORDERS)
@pytest.mark.parametrize("masks", [(), (0b1,), (0b1011010,)])
def test_exhaustive_bijection_small_device(order, masks):
    m = AddressMap(SMALL_GEOMETRY, AddressMapConfig(order, masks))
    g = SMALL_GEOMETRY
    seen = set()
    for addr in range(0, g.capacity_bytes, g.word_bytes):
        d = m.phys_to_dram(addr)
        assert m.dram_to_phys(*d) == addr
        seen.add(d)
    assert len(seen) == g.banks * g.rows_per_bank * g.columns_per_row


@settings(max_examples=300)
@given(st.integers(0, G.capacity_bytes - 1), st.sampled_from(ORDERS),
       st.lists(st.integers(0, G.rows_per_bank - 1), max_size=3))
def test_round_trip_default_device(addr, order, masks):
    m = AddressMap(G, AddressMapConfig(order, tuple(masks)))
    word_addr = addr - addr % G.word_bytes
    assert m.dram_to_phys(*m.phys_to_dram(addr)) == word_addr


def test_xor_scramble_splits_neighbouring_rows():
    # bank bit 0 ^= row bit 0: flipping only the lowest row address bit must change banks
    plain = AddressMap(G)
    scr = AddressMap(G, AddressMapConfig(bank_xor_masks=(0b1,)))
    row_stride = G.row_bytes * G.banks
    a, b = 5 * G.row_bytes, 5 * G.row_bytes + row_stride
    assert a ^ b == row_stride  # differ in a single address bit
    assert plain.phys_to_dram(a).bank == plain.phys_to_dram(b).bank == 5
    assert scr.phys_to_dram(a).bank == 5
    assert scr.phys_to_dram(b).bank == 4  # 5 ^ parity(1 & 1)


def test_xor_mask_parity_arithmetic():
    m = AddressMap(G, AddressMapConfig(bank_xor_masks=(0b110, 0b1)))
    row = 0b011  # parity(row & 0b110) = 1, parity(row & 0b1) = 1
    addr = row * G.row_bytes * G.banks
    assert m.phys_to_dram(addr) == (0b11, row, 0)


def test_out_of_range():
    m = AddressMap(G)
    with pytest.raises(AddressError):
        m.phys_to_dram(G.capacity_bytes)
    with pytest.raises(AddressError):
        m.phys_to_dram(-1)
    with pytest.raises(AddressError):
        m.dram_to_phys(G.banks, 0, 0)


def test_bad_scramble_configs():
    with pytest.raises(ConfigError):
        AddressMap(DeviceGeometry(banks=6), AddressMapConfig(bank_xor_masks=(1,)))
    with pytest.raises(ConfigError):
        AddressMap(G, AddressMapConfig(bank_xor_masks=(1, 2, 4, 8)))
    with pytest.raises(ConfigError):
        AddressMapConfig(order=("col", "row"))
