"""Smoothing-spline growth curves with covariates.

Fits ``y = h(t, u, i)^T beta + sum_l f_l(t) g_l(u, i) + noise`` where the
temporal functions ``f_l`` are penalized splines, with GCV or risk-based
smoothing-parameter selection and pointwise plug-in error bands.
"""

from .bspline import SplineBasis, PenaltyMatrix, make_basis, eval_basis, penalty_matrix, design_matrix, evaluate
from .design import (AssembledSystem, CovariateBasis, Dataset, Individual, ParametricBasis, assemble,
                     individual_design, place_knots)
from .errors import ConfigError, CovgrowError, DataError, DomainError, IdentifiabilityError, SelectionError
from .kernels import BACKEND
from .selection import (SelectionConfig, gcv_scan, gcv_score, lambda_fixed_point, rhat, risk, risk_gradient,
                        risk_hat_gradient, select, sigma2_hat)
from .separable import UniformSystem, check_uniform, solve_multivariate, solve_separable
from .solver import (FitResult, PenalizedSolution, expected_error, influence_trace, posterior_covariance,
                     predict, solve_penalized)

__version__ = "0.1.0"

__all__ = [
    "AssembledSystem", "BACKEND", "ConfigError", "CovariateBasis", "CovgrowError", "DataError", "Dataset",
    "DomainError", "FitResult", "IdentifiabilityError", "Individual", "ParametricBasis", "PenalizedSolution",
    "PenaltyMatrix", "SelectionConfig", "SelectionError", "SplineBasis", "UniformSystem", "assemble",
    "check_uniform", "design_matrix", "eval_basis", "evaluate", "expected_error", "gcv_scan", "gcv_score",
    "individual_design", "influence_trace", "lambda_fixed_point", "make_basis", "penalty_matrix",
    "place_knots", "posterior_covariance", "predict", "rhat", "risk", "risk_gradient", "risk_hat_gradient",
    "select", "sigma2_hat", "solve_multivariate", "solve_penalized", "solve_separable",
]
