"""Spectral laboratory for the dispersion-managed cubic NLS in two dimensions."""

from .dispersion import DispersionMap, average, evaluate, from_literal, gamma_integral, inverse_gamma, piecewise
from .solver import EquationSpec, Kind, Trajectory, evolve
from .spectral import Field, Grid

__all__ = [
    "DispersionMap",
    "EquationSpec",
    "Field",
    "Grid",
    "Kind",
    "Trajectory",
    "average",
    "evaluate",
    "evolve",
    "from_literal",
    "gamma_integral",
    "inverse_gamma",
    "piecewise",
]
__version__ = "0.1.0"
