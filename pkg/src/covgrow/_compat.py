"""Optional numba acceleration.

Set ``COVGROW_DISABLE_NUMBA=1`` before import to force the numpy/scipy kernels.
"""

import os

_FLAG = os.environ.get("COVGROW_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG not in ("", "0", "false", "no")

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not DISABLED_BY_ENV

if HAS_NUMBA and not DISABLED_BY_ENV:
    from numba import njit as _njit

    def jit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        return _njit(*args, **kwargs)

else:

    def jit(*args, **kwargs):
        """Identity decorator used when numba is absent or disabled."""
        if args and callable(args[0]):
            return args[0]
        return lambda func: func
