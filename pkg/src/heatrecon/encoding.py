"""Sparse-reading encoders: Voronoi and mask pseudo-fields, plus normalization.

The Voronoi encoding assigns every grid node the value of its Euclidean
nearest sensor (ties break to the lowest sensor index), turning an irregular
point set into a dense piecewise-constant map. The mask encoding keeps the
readings only at the sensor-nearest nodes and adds a binary indicator
channel so that zero-valued readings stay distinguishable from background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import Grid, Readings, ScalarField, nearest_node

__all__ = ["PseudoField", "NormStats", "voronoi_encode", "mask_encode", "normalize", "denormalize"]


@dataclass(frozen=True)
class PseudoField:
    grid: Grid
    values: np.ndarray  # (ny, nx)
    kind: str  # "voronoi" | "mask"
    mask: np.ndarray | None = None  # binary (ny, nx), mask kind only

    def __post_init__(self):
        if self.kind not in ("voronoi", "mask"):
            raise ValueError(f"unknown pseudo-field kind {self.kind!r}")
        if (self.kind == "mask") != (self.mask is not None):
            raise ValueError("mask channel is required exactly for the mask kind")

    def __eq__(self, other):
        if not isinstance(other, PseudoField):
            return NotImplemented
        same_mask = (
            (self.mask is None and other.mask is None)
            or (self.mask is not None and other.mask is not None and np.array_equal(self.mask, other.mask))
        )
        return (
            self.grid == other.grid
            and self.kind == other.kind
            and np.array_equal(self.values, other.values)
            and same_mask
        )

    def channels(self) -> np.ndarray:
        """Stack into (1, ny, nx) or (2, ny, nx) model input."""
        if self.kind == "voronoi":
            return self.values[None]
        return np.stack([self.values, self.mask])


def voronoi_encode(readings: Readings, grid: Grid) -> PseudoField:
    """Nearest-sensor assignment over all grid nodes (direct O(m * nx * ny) scan)."""
    layout = readings.layout
    layout.check_inside(grid)
    gx, gy = grid.node_coords()
    pos = layout.as_array()
    d2 = (gx[None] - pos[:, 0, None, None]) ** 2 + (gy[None] - pos[:, 1, None, None]) ** 2
    owner = np.argmin(d2, axis=0)  # first minimum = lowest sensor index
    vals = np.asarray(readings.values, dtype=float)[owner]
    return PseudoField(grid, vals, "voronoi")


def mask_encode(readings: Readings, grid: Grid) -> PseudoField:
    """Readings pinned at sensor-nearest nodes plus a binary indicator channel."""
    layout = readings.layout
    layout.check_inside(grid)
    values = np.zeros((grid.ny, grid.nx))
    mask = np.zeros((grid.ny, grid.nx))
    seen: dict[tuple[int, int], int] = {}
    for s, (x, y) in enumerate(layout.positions):
        node = nearest_node(grid, x, y)
        if node in seen:
            raise ValueError(
                f"sensors {seen[node]} and {s} both map to grid node {node}; "
                "mask encoding needs node-distinct layouts"
            )
        seen[node] = s
        values[node] = readings.values[s]
        mask[node] = 1.0
    return PseudoField(grid, values, "mask", mask)


@dataclass(frozen=True)
class NormStats:
    """Affine normalization stats, computed over a training split."""

    t_min: float
    t_max: float

    def __post_init__(self):
        if not (self.t_max > self.t_min):
            raise ValueError(f"degenerate stats: t_min={self.t_min}, t_max={self.t_max}")

    @property
    def span(self) -> float:
        return self.t_max - self.t_min

    def to_dict(self) -> dict:
        return {"t_min": self.t_min, "t_max": self.t_max}

    @staticmethod
    def from_dict(d: dict) -> "NormStats":
        return NormStats(float(d["t_min"]), float(d["t_max"]))


def normalize(values, stats: NormStats):
    """Map Kelvin values into [0, 1] by the training-split extrema.

    Accepts a ScalarField (returns one flagged "norm") or a bare array.
    """
    if isinstance(values, ScalarField):
        return values.with_values((values.values - stats.t_min) / stats.span, units="norm")
    return (np.asarray(values, dtype=float) - stats.t_min) / stats.span


def denormalize(values, stats: NormStats):
    if isinstance(values, ScalarField):
        return values.with_values(values.values * stats.span + stats.t_min, units="K")
    return np.asarray(values, dtype=float) * stats.span + stats.t_min
