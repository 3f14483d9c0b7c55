"""Simulation of 5G NR positioning: resource grids, measurements, beams and position estimators."""

from . import beam, estimators, geometry, grid5g, linklevel, measurements, scenarios, simcli
from .errors import (
    AcquisitionError,
    ConfigError,
    DetectionError,
    GeometryError,
    GridCollisionError,
    NrlocError,
    RankDeficiencyError,
    SolverError,
)
from .simcli import RunSpec, compute_metrics, run_static, run_track

__version__ = "0.1.0"

__all__ = [
    "beam", "estimators", "geometry", "grid5g", "linklevel", "measurements", "scenarios", "simcli",
    "AcquisitionError", "ConfigError", "DetectionError", "GeometryError", "GridCollisionError",
    "NrlocError", "RankDeficiencyError", "SolverError",
    "RunSpec", "compute_metrics", "run_static", "run_track",
]
