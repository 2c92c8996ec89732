"""Consistent approximations, measure-valued diagnostics and admissibility
selection for the complete Euler system."""
from .thermo import DomainError, GasModel
from .domain import Field, Grid, TestFunction, Trajectory, load_trajectory, save_trajectory

__all__ = ["DomainError", "GasModel", "Field", "Grid", "TestFunction", "Trajectory",
           "load_trajectory", "save_trajectory"]
__version__ = "0.1.0"
