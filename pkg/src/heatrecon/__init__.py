"""Sparse-sensor temperature field reconstruction toolkit."""

from .domain import (
    BoundarySpec,
    ConductivityModel,
    Grid,
    HeatSource,
    Readings,
    ReferencePair,
    Sample,
    ScalarField,
    SensorLayout,
    SideSpec,
    make_grid,
    sample_at_sensors,
    uniform_sensor_layout,
)
from .encoding import NormStats, PseudoField, denormalize, mask_encode, normalize, voronoi_encode
from .estimators import FieldReconstructor

__version__ = "0.1.0"

__all__ = [
    "BoundarySpec",
    "ConductivityModel",
    "Grid",
    "HeatSource",
    "Readings",
    "ReferencePair",
    "Sample",
    "ScalarField",
    "SensorLayout",
    "SideSpec",
    "make_grid",
    "sample_at_sensors",
    "uniform_sensor_layout",
    "NormStats",
    "PseudoField",
    "denormalize",
    "mask_encode",
    "normalize",
    "voronoi_encode",
    "FieldReconstructor",
    "__version__",
]
