"""Penalized solves, influence traces, posterior covariance, expected error, prediction.

Smoothing parameters follow the convention in which the noise scale is
absorbed: the objective is
``(Y - X theta)^T Sigma_hat^{-1} (Y - X theta) + sum_l lambda_l theta^T S_l theta``
with ``Sigma = sigma^2 Sigma_hat``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve

from . import kernels
from .errors import IdentifiabilityError
from .linalg import cholesky_dense, factorize, whitened_congruence

PINV_RTOL = 1e-10


class PenalizedSolution:
    """Solution of the penalized normal equations at fixed smoothing parameters.

    All inverse-dependent quantities go through the Cholesky factor
    ``C + S(lambda) = L L^T``; ``G = (C + S)^{-1}`` is never formed.
    """

    def __init__(self, system, lambdas, path="auto"):
        self.system = system
        self.lambdas = system.check_lambdas(lambdas)
        if system.unresolved is not None:
            raise IdentifiabilityError(
                system.notes[0] if system.notes else "system is not identifiable",
                direction=system.unresolved[:, 0], labels=system.parameter_labels(),
            )
        try:
            self.factor = factorize(system, self.lambdas, path)
        except IdentifiabilityError as exc:
            exc.labels = system.parameter_labels()
            raise
        self.theta = self.factor.solve(system.rhs)

    @property
    def path(self):
        return self.factor.path

    def G(self, B):
        """``G @ B`` by two triangular solves."""
        return self.factor.solve(B)

    @cached_property
    def fitted_w(self):
        """Whitened fitted values ``Sigma_hat^{-1/2} X theta``."""
        s = self.system
        if s.banded:
            out = kernels.band_matvec(s.xw_first, s.xw_vals, self.theta[: s.n_spline])
            if s.q:
                out = out + s.Hw @ self.theta[s.n_spline:]
            return out
        return s.Xw @ self.theta

    @cached_property
    def residual_w(self):
        return self.system.yw - self.fitted_w

    @cached_property
    def rss(self) -> float:
        """Weighted residual sum of squares ``(Y - AY)^T Sigma_hat^{-1} (Y - AY)``."""
        r = self.residual_w
        return float(r @ r)

    @cached_property
    def W_C(self):
        """``L^{-1} C L^{-T}``; its trace is ``tr A``."""
        return whitened_congruence(self.factor, self.system.C)

    @cached_property
    def trace_A(self) -> float:
        return float(np.trace(self.W_C))

    def W_S(self, ells):
        """``L^{-1} S_g L^{-T}`` for the summed penalty over function indices ``ells``."""
        s = self.system
        Lp1 = s.L + 1
        out = np.zeros((s.p, s.p))
        for ell in np.atleast_1d(ells):
            E = np.zeros((s.p, s.K))
            E[np.arange(s.K) * Lp1 + ell, np.arange(s.K)] = 1.0
            half = self.factor.half_solve(E)
            out += half @ s.penalty.S @ half.T
        return out

    def penalty_vec(self, ells, v=None):
        """``S_g v`` (default ``v = theta``)."""
        v = self.theta if v is None else v
        return sum(self.system.penalty_apply(ell, v) for ell in np.atleast_1d(ells))

    @cached_property
    def S_theta(self):
        """``S_c(lambda) theta``."""
        return sum(lam * self.system.penalty_apply(ell, self.theta)
                   for ell, lam in enumerate(self.lambdas) if lam)

    def objective(self, theta=None) -> float:
        """Penalized weighted least-squares objective at ``theta``."""
        s = self.system
        theta = self.theta if theta is None else theta
        r = s.yw - s.Xw @ theta
        pen = sum(lam * theta @ s.penalty_apply(ell, theta) for ell, lam in enumerate(self.lambdas))
        return float(r @ r + pen)


def solve_penalized(system, lambdas, path="auto") -> np.ndarray:
    """Effective coefficient vector ``theta`` solving ``(C + S(lambda)) theta = X^T Sigma_hat^{-1} Y``."""
    return PenalizedSolution(system, lambdas, path).theta


def influence_trace(system, lambdas, path="auto") -> float:
    """``tr A(lambda) = tr(G C)``, computed without forming ``A``."""
    return PenalizedSolution(system, lambdas, path).trace_A


def _pinv_sym(A, rtol=PINV_RTOL):
    w, V = np.linalg.eigh(A)
    keep = w > rtol * max(w.max(initial=0.0), 0.0)
    return (V[:, keep] / w[keep]) @ V[:, keep].T


def posterior_covariance(system, lambdas, sigma2=1.0) -> np.ndarray:
    """Bayesian posterior covariance of the coefficients of an assembled system.

    See :func:`posterior_covariance_from` for the formula. Requires ``C`` to
    be invertible.
    """
    lam = system.check_lambdas(lambdas)
    return posterior_covariance_from(system.C, system.penalty_dense(lam), sigma2)


def posterior_covariance_from(C, S, sigma2=1.0) -> np.ndarray:
    """Combine the data covariance ``sigma^2 C^{-1}`` and the prior covariance
    ``sigma^2 S^-`` harmonically: ``((sigma^2 C^{-1})^{-1} + (sigma^2 S^-)^+)^{-1}``.

    ``S^-`` is the Moore-Penrose inverse from an eigendecomposition, dropping
    eigenvalues below ``1e-10`` of the largest.
    """
    C = np.asarray(C, dtype=float)
    Lc = cholesky_dense(C, "cross-product matrix C")
    data_cov = sigma2 * cho_solve((Lc, True), np.eye(C.shape[0]))
    prior_cov = sigma2 * _pinv_sym(np.asarray(S, dtype=float))
    cov = _inv_spd(_inv_spd(data_cov) + _pinv_sym(prior_cov))
    return 0.5 * (cov + cov.T)


def _inv_spd(A):
    Lc = cholesky_dense(0.5 * (A + A.T), "precision matrix")
    return cho_solve((Lc, True), np.eye(A.shape[0]))


@dataclass
class ExpectedError:
    """Sampling mean squared error of the coefficients, split into variance and bias."""

    variance: np.ndarray
    bias: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.variance + self.bias


def expected_error(system, lambdas, theta_true, sigma2, path="auto") -> ExpectedError:
    """``E[(theta_hat - theta)(theta_hat - theta)^T] = sigma^2 G C G + G S theta theta^T S G``.

    ``theta_true`` is an effective coefficient vector (or the estimate, for the
    plug-in approximation).
    """
    sol = PenalizedSolution(system, lambdas, path)
    GC = sol.G(system.C)
    var = sigma2 * sol.G(GC.T)
    theta_true = np.asarray(theta_true, dtype=float)
    S_theta = sum(lam * system.penalty_apply(ell, theta_true) for ell, lam in enumerate(sol.lambdas))
    b = sol.G(S_theta) if np.ndim(S_theta) else np.zeros(system.p)
    return ExpectedError(variance=0.5 * (var + var.T), bias=np.outer(b, b))


@dataclass
class FitResult:
    """Fitted model at the selected smoothing parameters."""

    alpha: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    lambdas: np.ndarray
    lambdas_std: np.ndarray
    sigma2: float
    sigma2_source: str
    trace_A: float
    gcv: float
    rss: float
    n_obs: int
    n_params: int
    method: str = "fixed"
    converged: bool = True
    iterations: int = 0
    rhat: float | None = None
    path: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    posterior_cov: np.ndarray | None = None

    def compute_posterior(self, system):
        self.posterior_cov = posterior_covariance(system, self.lambdas, self.sigma2)
        return self.posterior_cov


def build_fit(system, lambdas, sigma2=None, sigma2_source="given", **extra) -> FitResult:
    """Solve at ``lambdas`` and collect the summary quantities."""
    sol = PenalizedSolution(system, lambdas)
    n = system.n_obs
    trA = sol.trace_A
    gcv = (sol.rss / n) / (1.0 - trA / n) ** 2 if trA < n else np.inf
    if sigma2 is None:
        sigma2 = sol.rss / (n - trA) if trA < n else np.nan
        sigma2_source = "residual"
    alpha, beta = system.split(sol.theta)
    std = sol.lambdas / system.scales
    return FitResult(
        alpha=alpha, beta=beta, theta=sol.theta, lambdas=sol.lambdas, lambdas_std=std,
        sigma2=float(sigma2), sigma2_source=sigma2_source, trace_A=trA, gcv=float(gcv),
        rss=sol.rss, n_obs=n, n_params=system.p, **extra,
    )


def temporal_functions(fit, system, times, deriv=0):
    """Fitted ``f_l(t)`` for ``l = 0..L`` as an ``(n, L + 1)`` array."""
    from .bspline import evaluate

    return evaluate(system.basis, fit.alpha, times, deriv)


def predict(fit, system, times, covariates=None, individual=None, se=True):
    """Mean and plug-in standard error at new times for one individual.

    Parameters
    ----------
    fit : FitResult
    system : AssembledSystem
        The system the fit came from.
    times : array-like
    covariates : array-like, optional
        Covariate vector (or per-time matrix). Defaults to the stored
        individual's covariates when ``individual`` is a known id.
    individual : str or int, optional
        Id or position of a fitted individual; per-individual terms are zero
        for unknown individuals.

    Returns
    -------
    mean, se : numpy.ndarray
        ``se`` combines the variance ``sigma^2 G C G`` and the plug-in bias
        ``G S theta_hat theta_hat^T S G`` evaluated along each design row.
    """
    index = _individual_index(system, individual)
    if covariates is None:
        if index is None:
            raise ValueError("covariates are required for an unknown individual")
        covariates = system_covariates(system, index)
    D = system.design_rows(times, covariates, index)
    mean = D @ fit.theta
    if not se:
        return mean, None
    return mean, plugin_se(fit, system, D)


def plugin_se(fit, system, D):
    """Plug-in standard errors along the rows of an effective design ``D``."""
    sol = PenalizedSolution(system, fit.lambdas)
    V = sol.G(D.T)
    var = fit.sigma2 * np.einsum("ij,ij->j", V, system.C @ V)
    bias = (V.T @ sol.S_theta) ** 2 if np.ndim(sol.S_theta) else 0.0
    return np.sqrt(np.maximum(var + bias, 0.0))


def _individual_index(system, individual):
    if individual is None:
        return None
    if isinstance(individual, (int, np.integer)):
        return int(individual)
    try:
        return system.ids.index(str(individual))
    except ValueError:
        return None


def system_covariates(system, index):
    """Covariates of fitted individual ``index`` as stored at assembly."""
    return system.covariates[index]
