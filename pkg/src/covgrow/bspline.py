"""Clamped B-spline bases, evaluation with derivatives, and penalty Gram matrices."""

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from . import kernels
from .errors import DomainError


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """Clamped B-spline basis on ``[domain[0], domain[1]]``.

    Attributes
    ----------
    order : int
        Polynomial degree + 1 (4 for cubic splines).
    knots : numpy.ndarray
        Full knot vector with ``order``-fold boundary knots.
    domain : tuple of float
    transform : numpy.ndarray or None
        ``(K, n_coef)`` map from reduced to raw coefficients when the end
        functions are constrained to be linear; None otherwise.
    """

    order: int
    knots: np.ndarray
    domain: tuple
    transform: np.ndarray | None = field(default=None, repr=False)

    @property
    def degree(self) -> int:
        return self.order - 1

    @property
    def K(self) -> int:
        """Number of raw B-spline functions."""
        return len(self.knots) - self.order

    @property
    def n_coef(self) -> int:
        """Number of free coefficients (K, or K - 2 with linear ends)."""
        return self.K if self.transform is None else self.transform.shape[1]

    @property
    def interior_knots(self) -> np.ndarray:
        return self.knots[self.order:-self.order]

    @property
    def linear_ends(self) -> bool:
        return self.transform is not None

    def check_domain(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        a, b = self.domain
        bad = ~((ts >= a) & (ts <= b))
        if bad.any():
            raise DomainError(
                f"{int(bad.sum())} time(s) outside the spline domain [{a}, {b}], "
                f"e.g. t={ts[bad][0]!r}"
            )
        return ts


@dataclass(frozen=True, eq=False)
class PenaltyMatrix:
    """Gram matrix of ``gamma``-th derivatives, ``S[k, k'] = int B_k^(g) B_k'^(g) dt``."""

    gamma: int
    S: np.ndarray
    band: np.ndarray = field(repr=False)

    @property
    def bandwidth(self) -> int:
        return self.band.shape[0] - 1


def make_basis(interior_knots, domain, order=4, linear_ends=False) -> SplineBasis:
    """Build a clamped basis with ``len(interior_knots) + order`` functions.

    Parameters
    ----------
    interior_knots : array-like
        Strictly increasing knots strictly inside ``domain``.
    domain : (float, float)
    order : int, optional
        Spline order (degree + 1), at least 2. Default is 4 (cubic).
    linear_ends : bool, optional
        If True, reparameterize so the spline has zero second derivative at
        both ends, removing two coefficients. Default is False.
    """
    order = int(order)
    if order < 2:
        raise ValueError(f"spline order must be >= 2, got {order}")
    a, b = (float(domain[0]), float(domain[1]))
    if not b > a:
        raise ValueError(f"empty domain [{a}, {b}]")
    inner = np.asarray(interior_knots, dtype=float).ravel()
    if inner.size and np.any(np.diff(inner) <= 0):
        raise ValueError("interior knots must be strictly increasing")
    if inner.size and (inner[0] <= a or inner[-1] >= b):
        raise ValueError("interior knots must lie strictly inside the domain")
    knots = np.concatenate([np.full(order, a), inner, np.full(order, b)])
    basis = SplineBasis(order=order, knots=knots, domain=(a, b))
    if linear_ends:
        basis = SplineBasis(
            order=order, knots=knots, domain=(a, b), transform=_linear_end_transform(basis)
        )
    return basis


def _linear_end_transform(basis):
    if basis.order < 3:
        raise ValueError("linear end constraints need order >= 3")
    K = basis.K
    if K < basis.order + 2:
        raise ValueError("linear end constraints need at least two interior knots")
    a, b = basis.domain
    A = np.zeros((2, K))
    for row, t in enumerate((a, b)):
        first, vals = _raw_band(basis, np.array([t]), 2)
        A[row, first[0]:first[0] + basis.order] = vals[0]
    ends = [0, K - 1]
    inner = np.arange(1, K - 1)
    T = np.zeros((K, K - 2))
    T[inner, np.arange(K - 2)] = 1.0
    T[ends, :] = -np.linalg.solve(A[:, ends], A[:, inner])
    T[np.abs(T) < 1e-15 * np.abs(T).max()] = 0.0
    return T


def _raw_band(basis, ts, deriv):
    return kernels.basis_derivs(basis.knots, basis.order, basis.K, ts, int(deriv))


def eval_basis_many(basis: SplineBasis, ts, deriv=0):
    """Band form of the basis at many points.

    Returns
    -------
    first : numpy.ndarray of int, shape (n,)
        Index of the first coefficient in each point's band.
    vals : numpy.ndarray, shape (n, order)
        Values of the ``deriv``-th derivative of basis functions
        ``first .. first + order - 1``; all others are zero.
    """
    if not 0 <= deriv < basis.order:
        raise ValueError(f"derivative order must be in [0, {basis.order - 1}], got {deriv}")
    ts = basis.check_domain(ts)
    first, vals = _raw_band(basis, ts, deriv)
    if basis.transform is None:
        return first, vals
    order = basis.order
    new_first = np.clip(first - 1, 0, basis.n_coef - order)
    rows = first[:, None] + np.arange(order)[None, :]
    cols = new_first[:, None] + np.arange(order)[None, :]
    local = basis.transform[rows[:, :, None], cols[:, None, :]]
    return new_first, np.einsum("na,nab->nb", vals, local)


def eval_basis(basis: SplineBasis, t: float, deriv=0):
    """Non-zero band ``(first_index, values)`` of the basis at a single time."""
    first, vals = eval_basis_many(basis, np.array([float(t)]), deriv)
    return int(first[0]), vals[0]


def design_matrix(basis: SplineBasis, ts, deriv=0) -> np.ndarray:
    """Dense ``(n, n_coef)`` matrix of basis (derivative) values."""
    first, vals = eval_basis_many(basis, ts, deriv)
    n = len(first)
    X = np.zeros((n, basis.n_coef))
    cols = first[:, None] + np.arange(basis.order)[None, :]
    X[np.arange(n)[:, None], cols] = vals
    return X


def evaluate(basis: SplineBasis, coef, ts, deriv=0) -> np.ndarray:
    """Spline ``sum_k coef[k] B_k^(deriv)(t)``; ``coef`` may be (n_coef,) or (n_coef, m)."""
    first, vals = eval_basis_many(basis, ts, deriv)
    coef = np.asarray(coef, dtype=float)
    idx = first[:, None] + np.arange(basis.order)[None, :]
    if coef.ndim == 1:
        return np.einsum("na,na->n", vals, coef[idx])
    return np.einsum("na,nam->nm", vals, coef[idx])


def greville(basis: SplineBasis) -> np.ndarray:
    """Greville abscissae; as raw coefficients they reproduce ``f(t) = t``."""
    p = basis.degree
    if p == 0:
        return 0.5 * (basis.knots[:-1] + basis.knots[1:])
    return np.array([basis.knots[k + 1:k + 1 + p].mean() for k in range(basis.K)])


def to_raw_coef(basis: SplineBasis, coef) -> np.ndarray:
    """Map reduced coefficients to raw B-spline coefficients."""
    coef = np.asarray(coef, dtype=float)
    return coef if basis.transform is None else basis.transform @ coef


def quadrature_nodes(basis: SplineBasis, gamma: int):
    """Per-interval Gauss-Legendre nodes exact for products of gamma-th derivatives."""
    n_nodes = max(1, ceil((2 * (basis.order - 1 - gamma) + 1) / 2))
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    brk = np.unique(basis.knots)
    lo, hi = brk[:-1], brk[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def penalty_matrix(basis: SplineBasis, gamma: int) -> PenaltyMatrix:
    """Exact Gram matrix of ``gamma``-th basis derivatives (2 <= gamma <= order - 1)."""
    gamma = int(gamma)
    if not 2 <= gamma <= basis.order - 1:
        raise ValueError(f"gamma must be in [2, {basis.order - 1}] for order {basis.order}, got {gamma}")
    nodes, weights = quadrature_nodes(basis, gamma)
    first, vals = eval_basis_many(basis, nodes, gamma)
    bw = basis.order - 1
    band = kernels.gram_band(first.astype(np.int64), vals, weights, basis.n_coef, bw)
    return PenaltyMatrix(gamma=gamma, S=band_to_dense(band), band=band)


def penalty_null_basis(basis: SplineBasis, gamma: int) -> np.ndarray:
    """Orthonormal ``(n_coef, r)`` basis of the penalty null space.

    Built from the coefficient vectors of the monomials ``s^j`` (``j < gamma``,
    ``s`` the domain rescaled to [0, 1]) that the basis reproduces exactly,
    rather than from an eigendecomposition of the penalty, whose null vectors
    are only accurate to the penalty's condition number.
    """
    a, b = basis.domain
    n = max(8 * basis.n_coef, 200)
    t = a + (b - a) * 0.5 * (1 - np.cos(np.linspace(0, np.pi, n)))
    X = design_matrix(basis, t)
    s = (t - a) / (b - a)
    cols = []
    for j in range(gamma):
        target = s ** j
        c, *_ = np.linalg.lstsq(X, target, rcond=None)
        if np.linalg.norm(X @ c - target) <= 1e-9 * np.linalg.norm(target):
            cols.append(c)
    if not cols:
        return np.zeros((basis.n_coef, 0))
    Q, _ = np.linalg.qr(np.column_stack(cols))
    return Q


def band_to_dense(ab) -> np.ndarray:
    """Symmetric dense matrix from lower banded storage."""
    bw = ab.shape[0] - 1
    n = ab.shape[1]
    A = np.zeros((n, n))
    for d in range(bw + 1):
        i = np.arange(n - d)
        A[i + d, i] = ab[d, : n - d]
        A[i, i + d] = ab[d, : n - d]
    return A


def dense_to_band(A, bw) -> np.ndarray:
    """Lower banded storage of a symmetric matrix (entries beyond ``bw`` dropped)."""
    n = A.shape[0]
    ab = np.zeros((bw + 1, n))
    for d in range(min(bw, n - 1) + 1):
        i = np.arange(n - d)
        ab[d, : n - d] = A[i + d, i]
    return ab
