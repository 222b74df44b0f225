"""Finite-difference caloric solvers on space-time graph domains."""
from .domain import EmptySliceError, GraphDomain, rough_graph, sine_graph
from .field import BoundaryEdges, Grid, GridField, RatioError, geometric_times, sample_function
from .solver import (CompatibilityWarning, EllipticityError, GridResolutionError, MaxPrincipleError,
                     MaxPrincipleWarning, SolverError, VCFields, normal_derivative, solve_heat, solve_vc)

__all__ = [
    "BoundaryEdges", "CompatibilityWarning", "EllipticityError", "EmptySliceError", "GraphDomain",
    "Grid", "GridField", "GridResolutionError", "MaxPrincipleError", "MaxPrincipleWarning",
    "RatioError", "SolverError", "rough_graph", "VCFields", "geometric_times", "normal_derivative",
    "sample_function", "sine_graph", "solve_heat", "solve_vc",
]
