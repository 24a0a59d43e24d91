"""Numba switch.

Set ``FIM_DISABLE_NUMBA=1`` before import to run every kernel through its
pure numpy/Python fallback. Useful for debugging and for the kernel benchmark.
"""

import os

_FLAG = os.environ.get("FIM_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    if NUMBA_DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def njit(fn=None, **kwargs):
    """``numba.njit(nogil=True, cache=True)`` when available, else identity."""
    opts = {"nogil": True, "cache": True}
    opts.update(kwargs)

    def wrap(f):
        if not HAVE_NUMBA:
            return f
        return numba.njit(**opts)(f)

    if fn is not None:
        return wrap(fn)
    return wrap
