"""Two cheap randomness checks: monobit frequency and a 4-bit symbol chi-square."""
from __future__ import annotations

from dataclasses import dataclass
from math import erfc, sqrt

import numpy as np
from scipy.stats import chi2

MIN_BITS = 100_000
SYMBOL_BITS = 4


class InsufficientBitsError(ValueError):
    pass


@dataclass(frozen=True)
class RandomnessResult:
    n_bits: int
    ones_fraction: float
    monobit_p: float
    chi_square: float
    chi_square_dof: int
    chi_square_p: float

    def passes(self, alpha: float = 0.01, band: float = 0.01) -> bool:
        return abs(self.ones_fraction - 0.5) <= band and self.chi_square_p >= alpha


def monobit(bits: np.ndarray) -> tuple[float, float]:
    """Ones fraction and the frequency-test p-value erfc(|S_n| / sqrt(2n))."""
    n = bits.size
    ones = int(np.count_nonzero(bits))
    s = 2 * ones - n
    return ones / n, erfc(abs(s) / sqrt(2 * n))


def symbol_chi_square(bits: np.ndarray, width: int = SYMBOL_BITS) -> tuple[float, int, float]:
    """Pearson chi-square of non-overlapping `width`-bit symbols against uniform."""
    m = bits.size // width
    sym = bits[: m * width].reshape(m, width).astype(np.int64)
    values = sym @ (1 << np.arange(width, dtype=np.int64))
    counts = np.bincount(values, minlength=1 << width)
    expected = m / (1 << width)
    stat = float(((counts - expected) ** 2 / expected).sum())
    dof = (1 << width) - 1
    return stat, dof, float(chi2.sf(stat, dof))


def run_randomness_tests(bits, min_bits: int = MIN_BITS) -> RandomnessResult:
    arr = np.asarray(bits, dtype=np.uint8)
    if arr.size < min_bits:
        raise InsufficientBitsError(f"need at least {min_bits} bits, got {arr.size}")
    frac, p_mono = monobit(arr)
    stat, dof, p_chi = symbol_chi_square(arr)
    return RandomnessResult(int(arr.size), frac, p_mono, stat, dof, p_chi)
