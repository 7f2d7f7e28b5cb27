"""Numba switch.

Hot kernels are written once as plain Python loops over numpy arrays and
compiled with ``numba.njit`` when available.  Setting ``TACGRAPH_NO_NUMBA=1``
disables compilation; callers then dispatch to the vectorised numpy
implementations instead of running the loops interpreted.
"""

import os

_DISABLED = os.environ.get("TACGRAPH_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` or a pass-through decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
