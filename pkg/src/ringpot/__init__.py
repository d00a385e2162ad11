"""Solver and verification toolkit for limiting and finite-p potentials on
planar convex ring domains: level-set metamorphosis, streamlines and a
battery of empirical regularity checks.
"""

__version__ = "0.1.0"

from .geometry import ConvexRing, ConvexShape, RayHit, load_ring, ring_from_json, save_ring
from .grid import Grid, MatrixField, ScalarField, VectorField, build_grid, classify
from .inf_solver import InfSolverConfig, solve_inf
from .p_solver import ConvergenceError, PSolverConfig, SolveStats, solve_p
from .reports import BoundReport, CheckReport
from .streamline import Streamline, TraceConfig, trace

__all__ = [
    "ConvexRing", "ConvexShape", "RayHit", "load_ring", "ring_from_json", "save_ring",
    "Grid", "ScalarField", "VectorField", "MatrixField", "build_grid", "classify",
    "InfSolverConfig", "solve_inf", "PSolverConfig", "SolveStats", "solve_p",
    "ConvergenceError", "BoundReport", "CheckReport",
    "Streamline", "TraceConfig", "trace",
    "__version__",
]
