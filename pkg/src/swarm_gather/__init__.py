"""Simulation of multi-agent gathering rules with geometric and Lyapunov checks."""

from .core import (
    TOL_GEOM,
    ConfigurationError,
    Constellation,
    GeometryError,
    IntegrationBlowupError,
    StepOutcome,
    SystemParams,
    VisibilityGraph,
    build_visibility,
    centroid,
    constellation,
    diameter,
    is_connected,
)
from .dynamics import SystemKind
from .scheduler import Schedule, activation_mask, delta_lower_bound
from .simulation import System, TrajectoryRecord, run

__all__ = [
    "TOL_GEOM",
    "ConfigurationError",
    "Constellation",
    "GeometryError",
    "IntegrationBlowupError",
    "StepOutcome",
    "SystemParams",
    "VisibilityGraph",
    "build_visibility",
    "centroid",
    "constellation",
    "diameter",
    "is_connected",
    "SystemKind",
    "Schedule",
    "activation_mask",
    "delta_lower_bound",
    "System",
    "TrajectoryRecord",
    "run",
]
