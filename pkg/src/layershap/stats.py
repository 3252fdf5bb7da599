"""Weight-magnitude statistics per layer and inner matrix."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .model import INNER_NAMES, ModelCheckpoint


@dataclass(frozen=True)
class InnerStats:
    mean: float
    std: float
    count: int


@dataclass(frozen=True)
class MagnitudeStats:
    # grid[t][k]: layer t+1, inner matrix k+1 in (q, k, v, o, gate, up, down) order
    grid: tuple[tuple[InnerStats, ...], ...]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.grid), len(self.grid[0]) if self.grid else 0

    def means(self) -> np.ndarray:
        return np.array([[s.mean for s in row] for row in self.grid])

    def stds(self) -> np.ndarray:
        return np.array([[s.std for s in row] for row in self.grid])

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("layer,inner,mean,std,count\n")
        for t, row in enumerate(self.grid, start=1):
            for k, s in enumerate(row, start=1):
                out.write(f"{t},{k},{s.mean!r},{s.std!r},{s.count}\n")
        return out.getvalue()


def matrix_stats(w: np.ndarray) -> InnerStats:
    """Mean and population standard deviation of ``|w|``."""
    a = np.abs(np.asarray(w, dtype=np.float64))
    return InnerStats(float(a.mean()), float(a.std()), int(a.size))


def magnitude_stats(model: ModelCheckpoint) -> MagnitudeStats:
    """Stats for the seven inner matrices of every layer; norm gains are excluded.

    Inner indices 1-4 are the attention projections and 5-7 the feed-forward ones.
    """
    grid = tuple(
        tuple(matrix_stats(getattr(layer, name)) for name in INNER_NAMES)
        for layer in model.layers
    )
    return MagnitudeStats(grid)
