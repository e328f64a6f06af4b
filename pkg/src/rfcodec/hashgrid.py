"""Multiresolution grid schedule and a hashed feature-grid encoder.

Level resolutions grow geometrically from ``n_min`` to ``n_max``. Each level
stores at most ``table_size`` feature vectors of width ``n_features``; coarse
levels whose vertex count fits are indexed densely, finer levels through a
spatial hash. Lookups blend the 8 surrounding vertices trilinearly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

# spatial hash primes, first axis left unscrambled
_PRIMES = np.array([1, 2654435761, 805459861], dtype=np.uint64)


@dataclass(frozen=True)
class GridSchedule:
    n_levels: int = 16
    n_min: int = 16
    n_max: int = 512
    table_size: int = 2**19
    n_features: int = 2

    def __post_init__(self):
        if self.n_levels < 2:
            raise DomainError("need at least two levels (growth factor divides by L - 1)")
        if not 0 < self.n_min < self.n_max:
            raise DomainError("require 0 < n_min < n_max")
        if self.table_size < 1 or self.n_features < 1:
            raise DomainError("table_size and n_features must be positive")

    @property
    def growth(self) -> float:
        return math.exp((math.log(self.n_max) - math.log(self.n_min)) / (self.n_levels - 1))


def grid_levels(schedule: GridSchedule) -> list[int]:
    b = schedule.growth
    levels = []
    for level in range(schedule.n_levels):
        n = schedule.n_min * b**level
        # b**(L-1) can land a hair under n_max; snap values within rounding noise
        nearest = round(n)
        levels.append(int(nearest) if abs(n - nearest) < 1e-9 * n else int(math.floor(n)))
    return levels


class HashGrid:
    """Feature lookup over the unit cube, one table per level."""

    def __init__(self, schedule: GridSchedule, seed: int = 0, init_scale: float = 1e-4):
        self.schedule = schedule
        self.levels = grid_levels(schedule)
        rng = np.random.default_rng(seed)
        self.table_sizes = [min(schedule.table_size, (n + 1) ** 3) for n in self.levels]
        self.tables = [
            rng.uniform(-init_scale, init_scale, size=(t, schedule.n_features)) for t in self.table_sizes
        ]

    def is_dense(self, level: int) -> bool:
        return (self.levels[level] + 1) ** 3 <= self.schedule.table_size

    def vertex_index(self, level: int, ijk: np.ndarray) -> np.ndarray:
        """Table slot of integer vertex coordinates ``ijk`` (..., 3) at ``level``."""
        n = self.levels[level] + 1
        ijk = np.asarray(ijk, dtype=np.int64)
        if self.is_dense(level):
            return ijk[..., 0] + n * (ijk[..., 1] + n * ijk[..., 2])
        h = ijk.astype(np.uint64) * _PRIMES
        h = h[..., 0] ^ h[..., 1] ^ h[..., 2]
        return (h % np.uint64(self.table_sizes[level])).astype(np.int64)

    def encode(self, x) -> np.ndarray:
        """Concatenated per-level features, shape (..., n_levels * n_features).

        Points are clamped to the unit cube.
        """
        x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
        feats = []
        for level, n in enumerate(self.levels):
            u = x * n
            i0 = np.minimum(np.floor(u).astype(np.int64), n - 1)
            f = u - i0
            acc = np.zeros(x.shape[:-1] + (self.schedule.n_features,))
            for corner in range(8):
                offs = np.array([(corner >> a) & 1 for a in range(3)])
                w = np.prod(np.where(offs, f, 1.0 - f), axis=-1)
                slot = self.vertex_index(level, i0 + offs)
                acc += w[..., None] * self.tables[level][slot]
            feats.append(acc)
        return np.concatenate(feats, axis=-1)
