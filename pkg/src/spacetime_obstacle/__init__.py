"""Adaptive space-time least-squares finite elements for parabolic obstacle problems."""

from .adaptive import ConvergenceRecord, adaptive_loop, solve_levels
from .assembly import QpSystem, assemble_system, functional_value
from .errors import (ArgumentError, DataError, DomainError, InternalError, LinearAlgebraError,
                     NonConvergenceError, ObstacleError, UnsupportedError)
from .estimator import EstimatorReport, ErrorReport, compute_error, compute_estimator, dorfler_mark
from .fespace import DiscreteSolution, build_spaces, evaluate, prolong
from .mesh import (SimplicialMesh, TensorMesh, make_cube_mesh, make_square_mesh,
                   make_tensor_mesh, nvb_refine, uniform_refine, write_vtk)
from .problems import PROBLEMS, ProblemSpec, get_problem
from .solver import PdasResult, SolverOptions, oracle_qp_solve, pdas_solve, sparse_spd_solve
from .study import StudyConfig, fit_rate, read_csv, run_study, write_csv

__version__ = "0.1.0"

__all__ = [
    "ConvergenceRecord", "adaptive_loop", "solve_levels",
    "QpSystem", "assemble_system", "functional_value",
    "ArgumentError", "DataError", "DomainError", "InternalError", "LinearAlgebraError",
    "NonConvergenceError", "ObstacleError", "UnsupportedError",
    "EstimatorReport", "ErrorReport", "compute_error", "compute_estimator", "dorfler_mark",
    "DiscreteSolution", "build_spaces", "evaluate", "prolong",
    "SimplicialMesh", "TensorMesh", "make_cube_mesh", "make_square_mesh", "make_tensor_mesh",
    "nvb_refine", "uniform_refine", "write_vtk",
    "PROBLEMS", "ProblemSpec", "get_problem",
    "PdasResult", "SolverOptions", "oracle_qp_solve", "pdas_solve", "sparse_spd_solve",
    "StudyConfig", "fit_rate", "read_csv", "run_study", "write_csv",
]
