"""Cholesky factorizations of ``C + S(lambda)``.

The banded path factors the spline block with a banded Cholesky and handles
the dense parametric border through its Schur complement, giving
``M = L L^T`` with ``L = [[L1, 0], [Z^T, L2]]``. The dense path is a plain
Cholesky of the full matrix and serves as the reference.
"""

from collections import Counter

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from . import kernels
from .errors import IdentifiabilityError

# a pivot below this fraction of its column's diagonal marks a singular matrix
PIVOT_RTOL = 1e-12
# above this standardized smoothing level the automatic path separates the
# penalty null space, since plain factorizations lose it to roundoff
SPLIT_LAMBDA_STD = 1e4

# sizes of every factorization performed, for structural tests
FACTOR_COUNTS = Counter()


def _as2d(B):
    B = np.asarray(B, dtype=float)
    return (B[:, None] if B.ndim == 1 else B), B.ndim == 1


def null_space(M, rtol):
    """Unit vectors spanning the numerical null space of a symmetric PSD matrix.

    Eigenvalues are compared after symmetric diagonal scaling, so the
    threshold is insensitive to the relative scale of the blocks.
    """
    d = np.sqrt(np.abs(np.diag(M)))
    d[d == 0] = 1.0
    w, V = np.linalg.eigh(M / np.outer(d, d))
    keep = w <= rtol * max(w.max(initial=0.0), 0.0)
    N = V[:, keep] / d[:, None]
    if N.size:
        N /= np.linalg.norm(N, axis=0)
    return N


def _singular(M, what):
    N = null_space(M, rtol=1e-12)
    if N.shape[1] == 0:
        w, V = np.linalg.eigh(M)
        N = V[:, :1]
    return IdentifiabilityError(
        f"{what} is numerically singular; null direction has largest components at "
        f"indices {np.argsort(-np.abs(N[:, 0]))[:4].tolist()}",
        direction=N[:, 0],
    )


def cholesky_dense(M, what="matrix"):
    """Lower Cholesky factor with a relative pivot check."""
    FACTOR_COUNTS[M.shape[0]] += 1
    try:
        Lc = cholesky(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise _singular(M, what) from None
    if M.shape[0] and not np.all(np.diag(Lc) ** 2 > PIVOT_RTOL * np.diag(M)):
        raise _singular(M, what)
    return Lc


class DenseFactor:
    path = "dense"

    def __init__(self, M):
        self.M = M
        self.p = M.shape[0]
        self.Lc = cholesky_dense(M, "penalized normal matrix")

    def half_solve(self, B):
        """``L^{-1} B``."""
        B2, vec = _as2d(B)
        out = solve_triangular(self.Lc, B2, lower=True, check_finite=False)
        return out[:, 0] if vec else out

    def half_solve_t(self, Y):
        """``L^{-T} Y``."""
        Y2, vec = _as2d(Y)
        out = solve_triangular(self.Lc, Y2, lower=True, trans="T", check_finite=False)
        return out[:, 0] if vec else out

    def solve(self, B):
        return self.half_solve_t(self.half_solve(B))


class BandedFactor:
    path = "banded"

    def __init__(self, band, C12, C22):
        self.n_s = band.shape[1]
        self.q = C22.shape[0]
        self.p = self.n_s + self.q
        FACTOR_COUNTS[self.p] += 1
        lb = np.array(band, dtype=float, order="C")
        fail = kernels.band_cholesky(lb, PIVOT_RTOL)
        if fail >= 0:
            from .bspline import band_to_dense

            raise _singular(band_to_dense(band), f"spline block (column {fail})")
        self.lb = lb
        if self.q:
            self.Z = kernels.band_forward(lb, np.ascontiguousarray(C12))
            schur = C22 - self.Z.T @ self.Z
            try:
                self.L2 = cholesky(schur, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                raise _singular(schur, "parametric Schur complement") from None
            if not np.all(np.diag(self.L2) ** 2 > PIVOT_RTOL * np.diag(C22)):
                raise _singular(schur, "parametric Schur complement")
        else:
            self.Z = np.zeros((self.n_s, 0))
            self.L2 = np.zeros((0, 0))

    def half_solve(self, B):
        B2, vec = _as2d(B)
        y1 = kernels.band_forward(self.lb, np.ascontiguousarray(B2[: self.n_s]))
        if self.q:
            y2 = solve_triangular(self.L2, B2[self.n_s:] - self.Z.T @ y1, lower=True, check_finite=False)
            out = np.vstack([y1, y2])
        else:
            out = y1
        return out[:, 0] if vec else out

    def half_solve_t(self, Y):
        Y2, vec = _as2d(Y)
        if self.q:
            x2 = solve_triangular(self.L2, Y2[self.n_s:], lower=True, trans="T", check_finite=False)
            x1 = kernels.band_backward(self.lb, np.ascontiguousarray(Y2[: self.n_s] - self.Z @ x2))
            out = np.vstack([x1, x2])
        else:
            out = kernels.band_backward(self.lb, np.ascontiguousarray(Y2))
        return out[:, 0] if vec else out

    def solve(self, B):
        return self.half_solve_t(self.half_solve(B))


class PenaltySplit:
    """Orthogonal change of coordinates separating the penalty null space.

    Per temporal function the coefficients are rotated into an orthonormal
    basis of the exact polynomial null space of ``S`` and its complement.
    New coordinates are ordered: complement blocks of every function, null
    blocks of every function, then parametric coefficients. In these
    coordinates the penalty vanishes identically on the null block, so
    heavy smoothing no longer swamps the data information there.
    """

    def __init__(self, system):
        from .bspline import penalty_null_basis

        K, Lp1, p = system.K, system.L + 1, system.p
        N = penalty_null_basis(system.basis, system.gamma)
        full, _ = np.linalg.qr(N, mode="complete") if N.shape[1] else (np.eye(K), None)
        R = full[:, N.shape[1]:]
        self.r_null = N.shape[1]
        self.r_range = K - self.r_null
        self.S_range = R.T @ system.penalty.S @ R
        self.S_range = 0.5 * (self.S_range + self.S_range.T)
        T = np.zeros((p, p))
        for ell in range(Lp1):
            rows = np.arange(K) * Lp1 + ell
            T[np.ix_(rows, ell * self.r_range + np.arange(self.r_range))] = R
            T[np.ix_(rows, Lp1 * self.r_range + ell * self.r_null + np.arange(self.r_null))] = N
        T[system.n_spline:, system.n_spline:] = np.eye(system.q)
        self.T = T
        self.C = T.T @ system.C @ T
        self.C = 0.5 * (self.C + self.C.T)
        self.Lp1 = Lp1

    def matrix(self, lam):
        M = self.C.copy()
        r = self.r_range
        for ell, val in enumerate(lam):
            if val:
                s = slice(ell * r, (ell + 1) * r)
                M[s, s] += val * self.S_range
        return M


class SplitFactor:
    """``M = (T L')(T L')^T`` with ``L'`` the Cholesky factor in split coordinates."""

    path = "split"

    def __init__(self, split, lam):
        self.T = split.T
        self.p = self.T.shape[0]
        M = split.matrix(lam)
        try:
            self.Lc = cholesky_dense(M, "penalized normal matrix")
        except IdentifiabilityError as exc:
            if exc.direction is not None:
                exc.direction = self.T @ exc.direction
            raise

    def half_solve(self, B):
        B2, vec = _as2d(B)
        out = solve_triangular(self.Lc, self.T.T @ B2, lower=True, check_finite=False)
        return out[:, 0] if vec else out

    def half_solve_t(self, Y):
        Y2, vec = _as2d(Y)
        out = self.T @ solve_triangular(self.Lc, Y2, lower=True, trans="T", check_finite=False)
        return out[:, 0] if vec else out

    def solve(self, B):
        return self.half_solve_t(self.half_solve(B))


def factorize(system, lambdas, path="auto"):
    """Factor ``C + sum_l lambda_l S_l`` for an assembled system.

    ``path`` is one of ``"banded"`` (bordered banded Cholesky; diagonal
    covariances only), ``"dense"`` (plain Cholesky), ``"split"`` (penalty
    null space separated, accurate for arbitrarily heavy smoothing) or
    ``"auto"``: split when any standardized smoothing parameter exceeds
    ``SPLIT_LAMBDA_STD``, otherwise banded when available, else dense.
    """
    lam = system.check_lambdas(lambdas)
    if path not in ("auto", "banded", "dense", "split"):
        raise ValueError(f"unknown path {path!r}")
    if path == "banded" and not system.banded:
        raise ValueError("banded path needs diagonal within-individual covariances")
    if path == "split" or (path == "auto" and np.max(lam / system.scales) > SPLIT_LAMBDA_STD):
        return SplitFactor(system.penalty_split, lam)
    if system.banded and path != "dense":
        band = system.C_band + system.penalty_band(lam)
        return BandedFactor(band, system.C12, system.C22)
    return DenseFactor(system.C + system.penalty_dense(lam))


def whitened_congruence(factor, A):
    """``L^{-1} A L^{-T}`` for symmetric ``A``."""
    left = factor.half_solve(A)
    return factor.half_solve(left.T.copy()).T
