"""Least-squares nonconforming spectral element solver for the 2D Stokes interface problem."""
from .basis import DofLayout, NodalField, gll_rule
from .functional import (
    ExactSolution, LeastSquaresFunctional, NormalSystem, ProblemSpec,
    assemble_normal_system, evaluate_functional, interpolate_exact,
)
from .geometry import GeometryError, Mesh, build_mesh, build_transfinite_map
from .postprocess import ErrorReport, compute_errors, convergence_table, make_conforming
from .problems import EXAMPLES, builtin_problem, polynomial_problem
from .solver import BlockPreconditioner, SolveReport, SolverError, build_preconditioner, pcg

__all__ = [
    "DofLayout", "NodalField", "gll_rule",
    "ExactSolution", "LeastSquaresFunctional", "NormalSystem", "ProblemSpec",
    "assemble_normal_system", "evaluate_functional", "interpolate_exact",
    "GeometryError", "Mesh", "build_mesh", "build_transfinite_map",
    "ErrorReport", "compute_errors", "convergence_table", "make_conforming",
    "EXAMPLES", "builtin_problem", "polynomial_problem",
    "BlockPreconditioner", "SolveReport", "SolverError", "build_preconditioner", "pcg",
]
