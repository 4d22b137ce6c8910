"""Vectorized numpy/scipy counterparts of the loop kernels.

Same signatures and storage conventions as ``_kernels_numba``.
"""

import numpy as np
from scipy.linalg import cholesky_banded, solve_banded


def find_spans(knots, order, n_basis, ts):
    spans = np.searchsorted(knots, ts, side="right") - 1
    return np.clip(spans, order - 1, n_basis - 1).astype(np.int64)


def basis_derivs(knots, order, n_basis, ts, deriv):
    p = order - 1
    ts = np.asarray(ts, dtype=float)
    n = ts.shape[0]
    spans = find_spans(knots, order, n_basis, ts)
    ndu = np.empty((order, order, n))
    left = np.empty((order, n))
    right = np.empty((order, n))
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = ts - knots[spans + 1 - j]
        right[j] = knots[spans + j] - ts
        saved = np.zeros(n)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    if deriv == 0:
        return spans - p, ndu[:, p].T.copy()

    out = np.empty((order, n))
    a = np.empty((2, order, n))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        d = np.zeros(n)
        for k in range(1, deriv + 1):
            d = np.zeros(n)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d = d + a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d = d + a[s2, k] * ndu[r, pk]
            s1, s2 = s2, s1
        out[r] = d
    fac = 1.0
    for k in range(deriv):
        fac *= p - k
    return spans - p, (out * fac).T.copy()


def gram_band(first_col, vals, weights, n_cols, bw):
    n, m = vals.shape
    ab = np.zeros((bw + 1, n_cols))
    wv = vals * weights[:, None]
    for d in range(m):
        # entries (c + b + d, c + b) for b = 0..m-d-1
        prod = vals[:, d:] * wv[:, : m - d]
        cols = first_col[:, None] + np.arange(m - d)[None, :]
        ab[d] += np.bincount(cols.ravel(), weights=prod.ravel(), minlength=n_cols)[:n_cols]
    return ab


def band_cholesky(ab, rtol):
    diag = ab[0].copy()
    try:
        lb = cholesky_banded(ab, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        # locate the failing column for the diagnostic
        for j in range(1, ab.shape[1] + 1):
            try:
                cholesky_banded(ab[:, :j], lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                return j - 1
        return 0
    bad = np.nonzero(~(lb[0] ** 2 > rtol * diag))[0]
    if bad.size:
        return int(bad[0])
    ab[...] = lb
    return -1


def band_forward(lb, rhs):
    bw = lb.shape[0] - 1
    return solve_banded((bw, 0), lb, rhs, check_finite=False)


def _upper_of_transpose(lb):
    bw = lb.shape[0] - 1
    n = lb.shape[1]
    ub = np.zeros_like(lb)
    for d in range(bw + 1):
        # U[j, j + d] = L[j + d, j] lives at ub[bw - d, j + d]
        ub[bw - d, d:] = lb[d, : n - d]
    return ub


def band_backward(lb, rhs):
    bw = lb.shape[0] - 1
    return solve_banded((0, bw), _upper_of_transpose(lb), rhs, check_finite=False)


def band_matvec(first_col, vals, coef):
    m = vals.shape[1]
    idx = first_col[:, None] + np.arange(m)[None, :]
    return np.einsum("ij,ij->i", vals, coef[idx])


def band_rmatvec(first_col, vals, y, n_cols):
    m = vals.shape[1]
    idx = first_col[:, None] + np.arange(m)[None, :]
    return np.bincount(idx.ravel(), weights=(vals * y[:, None]).ravel(), minlength=n_cols)[:n_cols]
