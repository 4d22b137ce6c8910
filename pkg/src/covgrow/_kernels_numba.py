"""Loop kernels compiled with numba (plain Python when numba is unavailable).

Banded matrices use LAPACK lower storage: ``ab[d, j] = A[j + d, j]`` for
``0 <= d <= bw``.
"""

import numpy as np

from ._compat import jit


@jit
def find_spans(knots, order, n_basis, ts):
    """Knot-span index ``s`` with ``knots[s] <= t < knots[s + 1]`` for each t.

    The right domain endpoint maps to the last non-empty span.
    """
    degree = order - 1
    out = np.empty(ts.shape[0], dtype=np.int64)
    for r in range(ts.shape[0]):
        t = ts[r]
        if t >= knots[n_basis]:
            out[r] = n_basis - 1
            continue
        low = degree
        high = n_basis
        mid = (low + high) // 2
        while t < knots[mid] or t >= knots[mid + 1]:
            if t < knots[mid]:
                high = mid
            else:
                low = mid
            mid = (low + high) // 2
        out[r] = mid
    return out


@jit
def basis_derivs(knots, order, n_basis, ts, deriv):
    """Non-zero B-spline values (or derivatives of order ``deriv``) at ``ts``.

    Returns ``first`` (index of the first non-zero basis function per point)
    and ``vals`` of shape (n, order). Derivatives follow the
    Piegl-Tiller triangular scheme.
    """
    p = order - 1
    n = ts.shape[0]
    spans = find_spans(knots, order, n_basis, ts)
    first = spans - p
    vals = np.zeros((n, order))
    ndu = np.empty((order, order))
    a = np.empty((2, order))
    left = np.empty(order)
    right = np.empty(order)
    ders = np.empty((deriv + 1, order))
    for pt in range(n):
        t = ts[pt]
        i = spans[pt]
        ndu[0, 0] = 1.0
        for j in range(1, p + 1):
            left[j] = t - knots[i + 1 - j]
            right[j] = knots[i + j] - t
            saved = 0.0
            for r in range(j):
                ndu[j, r] = right[r + 1] + left[j - r]
                temp = ndu[r, j - 1] / ndu[j, r]
                ndu[r, j] = saved + right[r + 1] * temp
                saved = left[j - r] * temp
            ndu[j, j] = saved
        for j in range(p + 1):
            ders[0, j] = ndu[j, p]
        for r in range(p + 1):
            s1 = 0
            s2 = 1
            a[0, 0] = 1.0
            for k in range(1, deriv + 1):
                d = 0.0
                rk = r - k
                pk = p - k
                if r >= k:
                    a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                    d = a[s2, 0] * ndu[rk, pk]
                j1 = 1 if rk >= -1 else -rk
                j2 = k - 1 if r - 1 <= pk else p - r
                for j in range(j1, j2 + 1):
                    a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                    d += a[s2, j] * ndu[rk + j, pk]
                if r <= pk:
                    a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                    d += a[s2, k] * ndu[r, pk]
                ders[k, r] = d
                s1, s2 = s2, s1
        fac = float(p)
        for k in range(1, deriv + 1):
            for j in range(p + 1):
                ders[k, j] *= fac
            fac *= p - k
        for j in range(order):
            vals[pt, j] = ders[deriv, j]
    return first, vals


@jit
def gram_band(first_col, vals, weights, n_cols, bw):
    """Lower band of ``sum_r w_r x_r x_r^T`` for row-band rows ``x_r``."""
    ab = np.zeros((bw + 1, n_cols))
    m = vals.shape[1]
    for r in range(vals.shape[0]):
        c = first_col[r]
        w = weights[r]
        for b in range(m):
            vb = w * vals[r, b]
            if vb == 0.0:
                continue
            for a_ in range(b, m):
                ab[a_ - b, c + b] += vals[r, a_] * vb
    return ab


@jit
def band_cholesky(ab, rtol):
    """In-place lower banded Cholesky. Returns the first failing column or -1.

    A pivot fails when it is not above ``rtol`` times the column's original
    diagonal entry.
    """
    bw = ab.shape[0] - 1
    n = ab.shape[1]
    for j in range(n):
        s = ab[0, j]
        thresh = rtol * s
        k0 = max(0, j - bw)
        for k in range(k0, j):
            ljk = ab[j - k, k]
            s -= ljk * ljk
        if not (s > thresh and s > 0.0):
            return j
        ljj = np.sqrt(s)
        ab[0, j] = ljj
        for i in range(j + 1, min(n, j + bw + 1)):
            s2 = ab[i - j, j]
            k0 = max(0, i - bw)
            for k in range(k0, j):
                s2 -= ab[i - k, k] * ab[j - k, k]
            ab[i - j, j] = s2 / ljj
    return -1


@jit
def band_forward(lb, rhs):
    """Solve ``L y = rhs`` for banded lower factor ``lb``; rhs is (n, m)."""
    bw = lb.shape[0] - 1
    n = lb.shape[1]
    y = rhs.copy()
    for j in range(n):
        k0 = max(0, j - bw)
        for k in range(k0, j):
            ljk = lb[j - k, k]
            for c in range(y.shape[1]):
                y[j, c] -= ljk * y[k, c]
        inv = 1.0 / lb[0, j]
        for c in range(y.shape[1]):
            y[j, c] *= inv
    return y


@jit
def band_backward(lb, rhs):
    """Solve ``L^T x = rhs`` for banded lower factor ``lb``; rhs is (n, m)."""
    bw = lb.shape[0] - 1
    n = lb.shape[1]
    x = rhs.copy()
    for j in range(n - 1, -1, -1):
        for i in range(j + 1, min(n, j + bw + 1)):
            lij = lb[i - j, j]
            for c in range(x.shape[1]):
                x[j, c] -= lij * x[i, c]
        inv = 1.0 / lb[0, j]
        for c in range(x.shape[1]):
            x[j, c] *= inv
    return x


@jit
def band_matvec(first_col, vals, coef):
    """Row-band design times a coefficient vector."""
    n, m = vals.shape
    out = np.zeros(n)
    for r in range(n):
        c = first_col[r]
        acc = 0.0
        for a_ in range(m):
            acc += vals[r, a_] * coef[c + a_]
        out[r] = acc
    return out


@jit
def band_rmatvec(first_col, vals, y, n_cols):
    """Transposed row-band design times a data vector."""
    out = np.zeros(n_cols)
    n, m = vals.shape
    for r in range(n):
        c = first_col[r]
        for a_ in range(m):
            out[c + a_] += vals[r, a_] * y[r]
    return out
