"""Physical byte address <-> (bank, row, column word) mapping.

Fields are peeled off the word index in the configured order with divmod, so
any geometry works; with power-of-two sizes this is exactly bit slicing. An
optional scramble XORs each bank bit with the parity of selected row bits,
the way many memory controllers spread consecutive rows across banks.
"""
from __future__ import annotations

from typing import NamedTuple

from .config import AddressMapConfig, ConfigError, DeviceGeometry


class AddressError(ValueError):
    pass


class DramAddr(NamedTuple):
    bank: int
    row: int
    col: int


def _parity(x: int) -> int:
    return bin(x).count("1") & 1


class AddressMap:
    def __init__(self, geometry: DeviceGeometry, config: AddressMapConfig | None = None):
        self.geometry = geometry
        self.config = config or AddressMapConfig()
        self.sizes = {
            "col": geometry.columns_per_row,
            "bank": geometry.banks,
            "row": geometry.rows_per_bank,
        }
        masks = self.config.bank_xor_masks
        if masks:
            if geometry.banks & (geometry.banks - 1):
                raise ConfigError("bank XOR scrambling needs a power-of-two bank count")
            if len(masks) > geometry.banks.bit_length() - 1:
                raise ConfigError("more XOR masks than bank bits")
        self.capacity = geometry.capacity_bytes

    def _scramble(self, bank: int, row: int) -> int:
        # an involution: applying it twice returns the original bank
        for i, mask in enumerate(self.config.bank_xor_masks):
            bank ^= _parity(row & mask) << i
        return bank

    def phys_to_dram(self, addr: int) -> DramAddr:
        """Coordinates of the column word containing byte `addr`."""
        if not 0 <= addr < self.capacity:
            raise AddressError(f"physical address {addr:#x} outside capacity {self.capacity:#x}")
        rest = addr // self.geometry.word_bytes
        fields = {}
        for name in self.config.order:
            rest, fields[name] = divmod(rest, self.sizes[name])
        bank = self._scramble(fields["bank"], fields["row"])
        return DramAddr(bank, fields["row"], fields["col"])

    def dram_to_phys(self, bank: int, row: int, col: int) -> int:
        """Word-aligned physical address of a column word."""
        coords = {"bank": self._scramble(bank, row), "row": row, "col": col}
        for name, v in coords.items():
            if not 0 <= v < self.sizes[name]:
                raise AddressError(f"{name} {v} out of range")
        word = 0
        for name in reversed(self.config.order):
            word = word * self.sizes[name] + coords[name]
        return word * self.geometry.word_bytes
