"""Per-cell activation-failure probabilities and the deterministic sampler.

The map is never materialized. A row's weak cells are regenerated on demand
from a generator keyed by (seed, bank, row), so a 256 MiB device costs
nothing until a row is actually read with a shortened tRCD.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .config import BiasParams, DeviceGeometry

MASK64 = (1 << 64) - 1
_ROW_STREAM_TAG = 0xB1A5


def mix64(x: int) -> int:
    # splitmix64 finalizer
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def prf_uniform(seed: int, bank: int, row: int, bit: int, counter: int) -> float:
    """Uniform [0, 1) draw for the `counter`-th weak read of one cell."""
    h = mix64(seed & MASK64)
    h = mix64(h ^ bank)
    h = mix64(h ^ row)
    h = mix64(h ^ bit)
    h = mix64(h ^ counter)
    return (h >> 11) * (1.0 / (1 << 53))


def apply_temperature(p: np.ndarray | float, scale: float):
    """Multiply the failure odds by `scale`; 1.0 is the identity, 0 and 1 are fixed points."""
    if scale == 1.0:
        return p
    p = np.asarray(p, dtype=np.float64)
    out = scale * p / (scale * p + (1.0 - p))
    return np.clip(out, 0.0, 1.0)


class CellBiasMap:
    """Immutable activation-failure probability for every (bank, row, bit)."""

    def __init__(self, params: BiasParams, geometry: DeviceGeometry, seed: int):
        self.params = params
        self.geometry = geometry
        self.seed = seed
        explicit: dict[tuple[int, int], dict[int, float]] = {}
        for bank, row, bit, p in params.explicit:
            explicit.setdefault((int(bank), int(row)), {})[int(bit)] = float(p)
        self._explicit = explicit
        self.word_profile = lru_cache(maxsize=4096)(self._word_profile)

    def _key(self):
        return (self.params, self.geometry, self.seed)

    def __eq__(self, other):
        return isinstance(other, CellBiasMap) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def row_cells(self, bank: int, row: int) -> tuple[np.ndarray, np.ndarray]:
        """Sorted bit positions with nonzero p in one row, and their probabilities."""
        prm = self.params
        nbits = self.geometry.row_bits
        rng = np.random.default_rng([self.seed & MASK64, _ROW_STREAM_TAG, bank, row])
        n_rng = int(rng.binomial(nbits, prm.f_rng)) if prm.f_rng else 0
        n_alw = int(rng.binomial(nbits, prm.f_always)) if prm.f_always else 0
        pos = rng.choice(nbits, size=n_rng + n_alw, replace=False)
        p = np.concatenate([
            rng.uniform(*prm.rng_p_range, size=n_rng),
            rng.uniform(*prm.always_p_range, size=n_alw),
        ])
        overrides = self._explicit.get((bank, row))
        if overrides:
            keep = ~np.isin(pos, list(overrides))
            pos = np.concatenate([pos[keep], np.fromiter(overrides, dtype=np.int64)])
            p = np.concatenate([p[keep], np.fromiter(overrides.values(), dtype=np.float64)])
        p = apply_temperature(p, prm.temperature_scale)
        nz = p > 0
        order = np.argsort(pos[nz], kind="stable")
        return pos[nz][order].astype(np.int64), p[nz][order]

    def p(self, bank: int, row: int, bit: int) -> float:
        pos, p = self.row_cells(bank, row)
        i = np.searchsorted(pos, bit)
        if i < len(pos) and pos[i] == bit:
            return float(p[i])
        return 0.0

    def _word_profile(self, bank: int, row: int, col: int) -> tuple[tuple[int, float], ...]:
        # (bit-within-word, p) pairs for one column word
        w = self.geometry.word_bits
        pos, p = self.row_cells(bank, row)
        lo, hi = np.searchsorted(pos, [col * w, (col + 1) * w])
        return tuple((int(b) - col * w, float(q)) for b, q in zip(pos[lo:hi], p[lo:hi]))
