"""
Numba shim.

Set ``EKFBOUND_BACKEND=numpy`` to force the pure-numpy kernels (also used
automatically when numba cannot be imported).
"""
import os
import warnings

_requested = os.environ.get("EKFBOUND_BACKEND", "numba").strip().lower()

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kw):
        if len(args) == 1 and callable(args[0]) and not kw:
            return args[0]
        return lambda f: f

if _requested not in ("numba", "numpy"):
    warnings.warn(f"unknown EKFBOUND_BACKEND={_requested!r}, using numpy")
    _requested = "numpy"

if _requested == "numba" and not HAVE_NUMBA:  # pragma: no cover
    warnings.warn("numba is not installed - kernels fall back to numpy")

USE_NUMBA = HAVE_NUMBA and _requested == "numba"
BACKEND = "numba" if USE_NUMBA else "numpy"
