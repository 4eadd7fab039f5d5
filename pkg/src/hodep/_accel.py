"""Numba switch for the hot kernels.

Set ``HODEP_DISABLE_NUMBA=1`` to run every kernel on its pure-numpy/python
path. The flag is read at import time; tests and the benchmark flip
:data:`NUMBA_ENABLED` directly.
"""
import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

NUMBA_ENABLED = HAS_NUMBA and os.environ.get("HODEP_DISABLE_NUMBA", "0").lower() in ("", "0", "false", "no")


def njit(fn):
    """Compile ``fn`` with numba when available; keep the python original on ``.py_func``."""
    if not HAS_NUMBA:
        fn.py_func = fn
        return fn
    return numba.njit(cache=True)(fn)


def use_numba():
    return NUMBA_ENABLED
