"""Solvers for history-dependent variational-hemivariational inequalities."""

from vhisolve.core import (ALGEBRAIC_TOL, ITERATIVE_TOL, BlockNormFunctional, Box,
                           CompactMap, ConstraintSet, ConvexBifunction,
                           CustomBifunction, CustomFunctional, CustomHistory,
                           CustomSet, HistoryOperator, HistorySum, InnerProductSpace,
                           LinearCoupling, MonotoneOperator, NonsmoothFunctional,
                           Polyhedron, StructuredBifunction, TimeGrid, Trajectory,
                           VHIProblem, VolterraKernel, WellPosednessReport,
                           WholeSpace, ZeroBifunction, ZeroFunctional, ZeroHistory,
                           check_smallness, clarke_dd, estimate_lipschitz,
                           history_sum, operator_norm, project, select_subgrad,
                           volterra_apply)
from vhisolve.exceptions import (ConfigurationError, GridMismatchError,
                                 NonConvergenceError, ProjectionError, VHIError,
                                 WellPosednessError)
from vhisolve.static import (SolveReport, StaticInstance, brute_force_static,
                             residual_static, solve_static)
from vhisolve.stepper import (SteppingReport, contraction_diagnostics, fit_rate,
                              gronwall_uniqueness_check, solve_trajectory)

__version__ = "0.1.0"

__all__ = [
    "ALGEBRAIC_TOL", "ITERATIVE_TOL", "BlockNormFunctional", "Box", "CompactMap",
    "ConstraintSet", "ConvexBifunction", "CustomBifunction", "CustomFunctional",
    "CustomHistory", "CustomSet", "HistoryOperator", "HistorySum", "InnerProductSpace",
    "LinearCoupling", "MonotoneOperator", "NonsmoothFunctional", "Polyhedron",
    "StructuredBifunction", "TimeGrid", "Trajectory", "VHIProblem", "VolterraKernel",
    "WellPosednessReport", "WholeSpace", "ZeroBifunction", "ZeroFunctional",
    "ZeroHistory", "check_smallness", "clarke_dd", "estimate_lipschitz", "history_sum",
    "operator_norm", "project", "select_subgrad", "volterra_apply",
    "ConfigurationError", "GridMismatchError", "NonConvergenceError", "ProjectionError",
    "VHIError", "WellPosednessError",
    "SolveReport", "StaticInstance", "brute_force_static", "residual_static",
    "solve_static",
    "SteppingReport", "contraction_diagnostics", "fit_rate", "gronwall_uniqueness_check",
    "solve_trajectory",
]
