"""Optimal path planning for a robot subject to random total and partial breakdowns.

Value functions for the fully functional and damaged modes solve a pair of
coupled Hamilton-Jacobi-Bellman equations on a uniform grid. They are
computed with fast-marching sweeps accelerated by exact policy evaluation.
"""
from .grid import Grid2D, NodeSet, ScalarField, read_field, write_field
from .repair import ConfigurationError, RepairModel
from .solver import EnvironmentSpec, NonConvergenceError, ValueSolution, solve, value_iteration
from .trace import PdmpTrajectory, RunawayError, Simulator

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "EnvironmentSpec", "Grid2D", "NodeSet", "NonConvergenceError",
    "PdmpTrajectory", "RepairModel", "RunawayError", "ScalarField", "Simulator", "ValueSolution",
    "read_field", "solve", "value_iteration", "write_field",
]
