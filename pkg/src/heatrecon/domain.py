"""Core geometric and physical value types, plus the sensor sampling operator.

Everything here is an immutable value type: equality is structural and all
operations are pure, so instances can be shared freely across workers.
Fields are stored row-major with index (row = y, col = x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Grid",
    "ScalarField",
    "SensorLayout",
    "Readings",
    "HeatSource",
    "SideSpec",
    "BoundarySpec",
    "ConductivityModel",
    "Sample",
    "ReferencePair",
    "make_grid",
    "sample_at_sensors",
    "nearest_node",
    "uniform_sensor_layout",
]

SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class Grid:
    """Uniform node-centered grid over [0, lx] x [0, ly]."""

    nx: int
    ny: int
    lx: float
    ly: float

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs at least 2 nodes per axis, got {self.nx}x{self.ny}")
        if self.lx <= 0 or self.ly <= 0:
            raise ValueError(f"grid extents must be positive, got lx={self.lx}, ly={self.ly}")

    @property
    def hx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.ly / (self.ny - 1)

    def xs(self) -> np.ndarray:
        return np.arange(self.nx) * self.hx

    def ys(self) -> np.ndarray:
        return np.arange(self.ny) * self.hy

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid arrays (X, Y), each of shape (ny, nx)."""
        return np.meshgrid(self.xs(), self.ys())

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "lx": self.lx, "ly": self.ly}

    @staticmethod
    def from_dict(d: dict) -> "Grid":
        return Grid(int(d["nx"]), int(d["ny"]), float(d["lx"]), float(d["ly"]))


def make_grid(nx: int, ny: int, lx: float, ly: float) -> Grid:
    return Grid(nx, ny, lx, ly)


def _as_array(values, shape) -> np.ndarray:
    arr = np.asarray(values)
    if arr.shape != shape:
        raise ValueError(f"expected array of shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("array contains non-finite values")
    return arr


@dataclass(frozen=True)
class ScalarField:
    """A 2D grid-aligned field; values[i, j] lives at (x=j*hx, y=i*hy).

    units is "K" for Kelvin or "norm" for fields mapped into [0, 1].
    """

    grid: Grid
    values: np.ndarray
    units: str = "K"

    def __post_init__(self):
        object.__setattr__(self, "values", _as_array(self.values, (self.grid.ny, self.grid.nx)))
        if self.units not in ("K", "norm"):
            raise ValueError(f"unknown units {self.units!r}")

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.units == other.units
            and np.array_equal(self.values, other.values)
        )

    def with_values(self, values, units: str | None = None) -> "ScalarField":
        return ScalarField(self.grid, values, self.units if units is None else units)


@dataclass(frozen=True)
class SensorLayout:
    """Sensor coordinates in meters, bounded by the physical domain."""

    positions: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pos = tuple((float(x), float(y)) for x, y in self.positions)
        if len(pos) < 1:
            raise ValueError("layout needs at least one sensor")
        if len(set(pos)) != len(pos):
            raise ValueError("sensor positions must be pairwise distinct")
        object.__setattr__(self, "positions", pos)

    @property
    def m(self) -> int:
        return len(self.positions)

    def as_array(self) -> np.ndarray:
        return np.array(self.positions, dtype=float)

    def check_inside(self, grid: Grid):
        for x, y in self.positions:
            if not (0.0 <= x <= grid.lx and 0.0 <= y <= grid.ly):
                raise ValueError(f"sensor at ({x}, {y}) lies outside the {grid.lx}x{grid.ly} domain")


@dataclass(frozen=True)
class Readings:
    """Point temperature values observed at a sensor layout."""

    layout: SensorLayout
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) != self.layout.m:
            raise ValueError(f"got {len(vals)} readings for {self.layout.m} sensors")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("readings contain non-finite values")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class HeatSource:
    """A rectangular component with uniform or Gaussian-peaked power density.

    The Gaussian profile is Q * exp(-sigma_g * ((x-x0)^2 + (y-y0)^2) / r^2)
    inside the component rectangle and zero outside it.
    """

    kind: str  # "uniform" | "gaussian"
    region: tuple[float, float, float, float]  # (x_lo, y_lo, x_hi, y_hi)
    q: float  # peak power density, W/m^2
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0
    sigma_g: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        x_lo, y_lo, x_hi, y_hi = self.region
        if not (x_lo < x_hi and y_lo < y_hi):
            raise ValueError(f"degenerate source region {self.region}")
        if self.q < 0:
            raise ValueError("source power must be non-negative")
        if self.kind == "gaussian":
            if self.radius <= 0:
                raise ValueError("gaussian source needs radius > 0")
            if self.sigma_g <= 0:
                raise ValueError("gaussian source needs sigma_g > 0")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "region": list(self.region),
            "q": self.q,
            "center": list(self.center),
            "radius": self.radius,
            "sigma_g": self.sigma_g,
        }

    @staticmethod
    def from_dict(d: dict) -> "HeatSource":
        return HeatSource(
            kind=d["kind"],
            region=tuple(d["region"]),
            q=d["q"],
            center=tuple(d["center"]),
            radius=d["radius"],
            sigma_g=d["sigma_g"],
        )


@dataclass(frozen=True)
class SideSpec:
    """Boundary condition on one side of the domain.

    kind: "dirichlet" | "neumann" | "robin".
    Dirichlet sides carry either a constant profile T(s) = t0 or a sine
    profile T(s) = t0 + amplitude * sin(pi * s / L) along the side's arc
    length s, which pins corner values to t0. Robin sides link the outgoing
    flux to the ambient t0 through the convective coefficient h.
    """

    kind: str
    profile: str = "constant"  # "constant" | "sine" (dirichlet only)
    t0: float = 298.0
    amplitude: float = 25.0
    h: float = 50.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann", "robin"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.profile not in ("constant", "sine"):
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.profile == "sine" and self.kind != "dirichlet":
            raise ValueError("sine profiles are only valid on dirichlet sides")
        if self.kind == "robin" and self.h <= 0:
            raise ValueError("robin side needs h > 0")

    def dirichlet_values(self, s: np.ndarray, length: float) -> np.ndarray:
        if self.profile == "sine":
            return self.t0 + self.amplitude * np.sin(np.pi * s / length)
        return np.full_like(np.asarray(s, dtype=float), self.t0)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "profile": self.profile,
            "t0": self.t0,
            "amplitude": self.amplitude,
            "h": self.h,
        }

    @staticmethod
    def from_dict(d: dict) -> "SideSpec":
        return SideSpec(d["kind"], d["profile"], d["t0"], d["amplitude"], d["h"])


@dataclass(frozen=True)
class BoundarySpec:
    left: SideSpec
    right: SideSpec
    bottom: SideSpec
    top: SideSpec

    def side(self, name: str) -> SideSpec:
        return getattr(self, name)

    def kinds(self) -> dict[str, str]:
        return {name: self.side(name).kind for name in SIDES}

    def to_dict(self) -> dict:
        return {name: self.side(name).to_dict() for name in SIDES}

    @staticmethod
    def from_dict(d: dict) -> "BoundarySpec":
        return BoundarySpec(**{name: SideSpec.from_dict(d[name]) for name in SIDES})

    @staticmethod
    def all_dirichlet(t0: float = 298.0) -> "BoundarySpec":
        side = SideSpec("dirichlet", t0=t0)
        return BoundarySpec(side, side, side, side)


@dataclass(frozen=True)
class ConductivityModel:
    """Thermal conductivity law: constant, or affine in temperature.

    Affine form: lambda(T) = lambda0 + slope * (T - 298).
    """

    kind: str = "constant"  # "constant" | "affine"
    lambda0: float = 1.0
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "affine"):
            raise ValueError(f"unknown conductivity kind {self.kind!r}")
        if self.lambda0 <= 0:
            raise ValueError("lambda0 must be positive")

    def evaluate(self, temperature: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.full_like(np.asarray(temperature, dtype=float), self.lambda0)
        return self.lambda0 + self.slope * (np.asarray(temperature, dtype=float) - 298.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lambda0": self.lambda0, "slope": self.slope}

    @staticmethod
    def from_dict(d: dict) -> "ConductivityModel":
        return ConductivityModel(d["kind"], d["lambda0"], d["slope"])


@dataclass(frozen=True)
class Sample:
    """One simulated condition: sources, boundary, solved field, readings."""

    condition_id: str
    sources: tuple[HeatSource, ...]
    boundary: BoundarySpec
    field: ScalarField
    readings: Readings
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))


@dataclass(frozen=True)
class ReferencePair:
    target: Sample
    reference: Sample

    def __post_init__(self):
        if self.target is self.reference:
            raise ValueError("target and reference must be distinct samples")


def nearest_node(grid: Grid, x: float, y: float) -> tuple[int, int]:
    """Index (i, j) of the grid node nearest to (x, y) in Euclidean distance.

    Ties break to the first minimum in row-major scan order, i.e. the lowest
    node index.
    """
    if not (0.0 <= x <= grid.lx and 0.0 <= y <= grid.ly):
        raise ValueError(f"point ({x}, {y}) lies outside the domain")
    gx, gy = grid.node_coords()
    d2 = (gx - x) ** 2 + (gy - y) ** 2
    flat = int(np.argmin(d2))
    return flat // grid.nx, flat % grid.nx


def sample_at_sensors(fld: ScalarField, layout: SensorLayout) -> Readings:
    """Read the field at each sensor's nearest grid node (sensors snap to nodes)."""
    layout.check_inside(fld.grid)
    vals = []
    for x, y in layout.positions:
        i, j = nearest_node(fld.grid, x, y)
        vals.append(float(fld.values[i, j]))
    return Readings(layout, tuple(vals))


def uniform_sensor_layout(grid: Grid, k: int) -> SensorLayout:
    """Interior-uniform sqrt(k) x sqrt(k) sensor lattice excluding the boundary."""
    n = math.isqrt(k)
    if n * n != k or k < 1:
        raise ValueError(f"sensor count must be a perfect square, got {k}")
    xs = [(p + 1) * grid.lx / (n + 1) for p in range(n)]
    ys = [(p + 1) * grid.ly / (n + 1) for p in range(n)]
    return SensorLayout(tuple((x, y) for y in ys for x in xs))
