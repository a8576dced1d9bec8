"""Numba switch.

Hot kernels come in pairs: a loop version compiled with ``numba.njit`` and a
vectorised numpy version.  Setting ``TERRAINSEG_DISABLE_NUMBA=1`` (or running
without numba installed) selects the numpy versions at import time.
"""

import os

_FLAG = os.environ.get("TERRAINSEG_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(func=None, **kwargs):
    """``numba.njit`` with caching on, or a no-op when numba is unavailable."""
    opts = {"cache": True, "nogil": True}
    opts.update(kwargs)

    def wrap(f):
        if not HAVE_NUMBA:
            return f
        return numba.njit(**opts)(f)

    if func is None:
        return wrap
    return wrap(func)


def pick(nb_impl, np_impl):
    """Return the implementation selected by the environment flag."""
    return nb_impl if USE_NUMBA else np_impl
