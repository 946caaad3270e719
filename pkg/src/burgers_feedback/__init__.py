"""Finite-element simulation of the 2D viscous Burgers equation under Neumann boundary feedback."""

from .assembly import ControlMode, Field, PhysicsParams, ProjectionConfig
from .linalg import SolverConfig, SolverFailure
from .mesh import BoundaryTag, Mesh, build_structured_mesh, tag_boundary
from .stepper import ForcedProblem, RunConfig, run

__version__ = "0.1.0"
