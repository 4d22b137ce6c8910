"""Solvers for uniform temporal designs (every individual measured at the same times).

With a shared design the normal equations take the matrix form
``C_x alpha U U^T + S alpha Lambda = X^T Sigma^{-1} Y U^T`` where
``C_x = X^T Sigma^{-1} X`` and column ``l`` of ``alpha`` (K x (L+1)) holds the
coefficients of ``f_l``. Rotating covariate space with the eigenvectors of
``U U^T = O D O^T`` gives ``L + 1`` independent K x K problems. The rotated
problem shares the full solution only when all smoothing parameters are equal;
otherwise it is a different (separable) model.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .bspline import design_matrix, penalty_matrix
from .design import CovariateBasis, as_dataset
from .errors import DataError
from .linalg import cholesky_dense

GAP_RTOL = 1e-10


def check_uniform(dataset) -> bool:
    """True iff every individual has exactly the same time vector."""
    inds = as_dataset(dataset).individuals
    t0 = inds[0].times
    return all(ind.times.shape == t0.shape and np.array_equal(ind.times, t0) for ind in inds[1:])


def _eig_descending(A):
    w, V = np.linalg.eigh(A)
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    for j in range(V.shape[1]):
        col = V[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())
        if col[nz[0]] < 0:
            V[:, j] = -col
    return np.maximum(w, 0.0), V


@dataclass(eq=False)
class UniformSystem:
    """Shared-design system.

    Attributes
    ----------
    X : (n, K) temporal design shared by all individuals
    Y : (n, N) responses, one column per individual
    U : (L+1, N) covariate matrix, columns ``(1, g_1, ..., g_L)``
    Sigma : (n,) variances or (n, n) within-individual covariance, shared
    S : (K, K) penalty
    lambdas : (L+1,) smoothing parameters
    """

    X: np.ndarray
    Y: np.ndarray
    U: np.ndarray
    Sigma: np.ndarray
    S: np.ndarray
    lambdas: np.ndarray
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float).reshape(self.X.shape[0], -1)
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        self.lambdas = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        if self.U.shape[1] != self.Y.shape[1]:
            raise DataError(f"U has {self.U.shape[1]} columns for {self.Y.shape[1]} individuals")
        if self.lambdas.size == 1 and self.U.shape[0] > 1:
            self.lambdas = np.full(self.U.shape[0], self.lambdas[0])
        if self.lambdas.shape != (self.U.shape[0],):
            raise ValueError(f"expected {self.U.shape[0]} smoothing parameters")
        Sigma = np.asarray(self.Sigma, dtype=float)
        if Sigma.ndim == 1:
            self._Xs = self.X / Sigma[:, None]
        else:
            Ls = cholesky_dense(Sigma, "within-individual covariance")
            self._Xs = cho_solve((Ls, True), self.X)
        self.Sigma = Sigma
        self.Cx = self.X.T @ self._Xs
        self.R = self._Xs.T @ self.Y @ self.U.T
        self.D, self.O = _eig_descending(self.U @ self.U.T)
        gaps = -np.diff(self.D)
        self.gap = float(gaps.min() / max(self.D[0], 1e-300)) if gaps.size else np.inf
        if self.gap < GAP_RTOL:
            self.notes.append(f"near-degenerate covariate eigenvalues (relative gap {self.gap:.3g})")

    @property
    def K(self) -> int:
        return self.X.shape[1]

    @property
    def L(self) -> int:
        return self.U.shape[0] - 1

    @classmethod
    def from_dataset(cls, dataset, basis, gbasis=None, lambdas=1.0, gamma=2):
        """Build from a dataset with identical times and covariances (no parametric terms)."""
        dataset = as_dataset(dataset)
        if not check_uniform(dataset):
            raise DataError("individuals do not share identical measurement times")
        cov0 = dataset.individuals[0].covariance
        for ind in dataset.individuals[1:]:
            if ind.covariance.shape != cov0.shape or not np.array_equal(ind.covariance, cov0):
                raise DataError("individuals do not share the same within-individual covariance")
        if dataset.time_dependent:
            raise DataError("time-dependent covariates do not give a uniform design")
        gbasis = gbasis or CovariateBasis()
        if not gbasis.fitted:
            gbasis = gbasis.fit(dataset)
        U = np.column_stack([gbasis.values(ind.covariates, i) for i, ind in enumerate(dataset)])
        X = design_matrix(basis, dataset.individuals[0].times)
        Y = np.column_stack([ind.responses for ind in dataset])
        return cls(X=X, Y=Y, U=U, Sigma=cov0, S=penalty_matrix(basis, gamma).S, lambdas=lambdas)

    def residual(self, alpha) -> np.ndarray:
        """Left minus right side of the matrix normal equations."""
        return self.Cx @ alpha @ self.U @ self.U.T + self.S @ alpha @ np.diag(self.lambdas) - self.R


def solve_multivariate(us: UniformSystem) -> np.ndarray:
    """Solve the coupled ``K (L+1)`` system without separation.

    Uses ``vec(A alpha B) = (B^T kron A) vec(alpha)`` with column-stacked ``vec``.
    """
    M = np.kron(us.U @ us.U.T, us.Cx) + np.kron(np.diag(us.lambdas), us.S)
    Lc = cholesky_dense(0.5 * (M + M.T), "multivariate normal matrix")
    vec = cho_solve((Lc, True), us.R.ravel(order="F"))
    return vec.reshape(us.K, us.L + 1, order="F")


def solve_separable(us: UniformSystem) -> np.ndarray:
    """Solve the rotated model as ``L + 1`` independent K x K problems.

    In rotated coordinates ``alpha_rot = alpha O`` each column solves
    ``(d_l C_x + lambda_l S) a_l = (R O)_l``; the result is mapped back with
    ``O^T``. Equal to :func:`solve_multivariate` when all lambdas are equal.
    """
    rhs = us.R @ us.O
    rot = np.empty((us.K, us.L + 1))
    for ell in range(us.L + 1):
        A = us.D[ell] * us.Cx + us.lambdas[ell] * us.S
        Lc = cholesky_dense(0.5 * (A + A.T), f"rotated problem {ell}")
        rot[:, ell] = cho_solve((Lc, True), rhs[:, ell])
    return rot @ us.O.T
