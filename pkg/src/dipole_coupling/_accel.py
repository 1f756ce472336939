"""Numba switch.

Hot kernels are written twice: an ``@njit`` loop version and a vectorised
numpy version.  Set ``DIPOLE_COUPLING_DISABLE_NUMBA=1`` to force the numpy
path (useful for debugging and for platforms without numba).
"""
import os

_FLAG = os.environ.get("DIPOLE_COUPLING_DISABLE_NUMBA", "0").strip().lower()

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")

JIT_OPTIONS = {"nogil": True, "cache": True}


def njit(fn):
    """Compile ``fn`` with numba when available, else return it unchanged."""
    if HAVE_NUMBA:
        return numba.njit(**JIT_OPTIONS)(fn)
    return fn


def backend():
    return "numba" if USE_NUMBA else "numpy"
