"""Semi-implicit FEM/FV dynamical core on an extruded cubed-sphere shell."""

from .constants import PhysicalConstants, EARTH
from .mesh import CubedSphereMesh, VerticalMeshSpec
from .fem import FemOperators
from .transport import Transport
from .solver import (LinearSystem, ReferenceState, SchurPreconditioner,
                     SolverConfig, SolverFailureError, krylov_solve)
from .timestepper import StateVector, Timestepper, TimesteppingConfig

__all__ = [
    "PhysicalConstants",
    "EARTH",
    "CubedSphereMesh",
    "VerticalMeshSpec",
    "FemOperators",
    "Transport",
    "LinearSystem",
    "ReferenceState",
    "SchurPreconditioner",
    "SolverConfig",
    "SolverFailureError",
    "krylov_solve",
    "StateVector",
    "Timestepper",
    "TimesteppingConfig",
]

__version__ = "0.1.0"
