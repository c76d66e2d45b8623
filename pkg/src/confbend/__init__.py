"""Numerical conformal deformation to prescribed modified-Schouten eigenvalue data on periodic grids."""

__version__ = "0.1.0"

from .cones import ConeSpec, EquationParams, validate_params
from .curvature import MetricField
from .grid import Grid, ScalarField, SymTensorField
from .operator import OperatorContext
from .seed import SeedConfig
from .solver import SolverConfig, continuity_solve, newton

__all__ = [
    "ConeSpec",
    "EquationParams",
    "Grid",
    "MetricField",
    "OperatorContext",
    "ScalarField",
    "SeedConfig",
    "SolverConfig",
    "SymTensorField",
    "continuity_solve",
    "newton",
    "validate_params",
]
