"""Kernel dispatch: numba loop kernels by default, numpy/scipy otherwise."""

from ._compat import USE_NUMBA

if USE_NUMBA:
    from ._kernels_numba import (
        band_backward,
        band_cholesky,
        band_forward,
        band_matvec,
        band_rmatvec,
        basis_derivs,
        find_spans,
        gram_band,
    )

    BACKEND = "numba"
else:
    from ._kernels_numpy import (
        band_backward,
        band_cholesky,
        band_forward,
        band_matvec,
        band_rmatvec,
        basis_derivs,
        find_spans,
        gram_band,
    )

    BACKEND = "numpy"

__all__ = [
    "BACKEND",
    "band_backward",
    "band_cholesky",
    "band_forward",
    "band_matvec",
    "band_rmatvec",
    "basis_derivs",
    "find_spans",
    "gram_band",
]
