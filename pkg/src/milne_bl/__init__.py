"""Curvature-corrected Milne boundary-layer solver and diffusive-limit harness."""

from .geometry import CurvatureProfile, GeometryError, LocalGeometry, MilneConfig
from .phase_grid import Field, PhaseGrid
from .solver import (
    IncompatibilityError,
    MilneProblem,
    MilneSolution,
    NonConvergenceError,
    apply_K,
    apply_T,
    check_compatibility,
    estimate_fL,
    hydro_lift,
    solve,
    solve_diffusive,
    solve_inflow,
    solve_psi_derivative,
    solve_tangential,
)

__version__ = "0.1.0"

__all__ = [
    "CurvatureProfile",
    "Field",
    "GeometryError",
    "IncompatibilityError",
    "LocalGeometry",
    "MilneConfig",
    "MilneProblem",
    "MilneSolution",
    "NonConvergenceError",
    "PhaseGrid",
    "apply_K",
    "apply_T",
    "check_compatibility",
    "estimate_fL",
    "hydro_lift",
    "solve",
    "solve_diffusive",
    "solve_inflow",
    "solve_psi_derivative",
    "solve_tangential",
]
