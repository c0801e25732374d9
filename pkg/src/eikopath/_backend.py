"""Numba availability and the environment switch for the pure-numpy path.

Set ``EIKOPATH_DISABLE_NUMBA=1`` before import to force the numpy/scipy
kernels even when numba is installed.
"""
import os

_DISABLED = os.environ.get("EIKOPATH_DISABLE_NUMBA", "").strip().lower() in (
    "1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("numba disabled by EIKOPATH_DISABLE_NUMBA")
    from numba import njit as _njit
    NUMBA_AVAILABLE = True
except ImportError:
    _njit = None
    NUMBA_AVAILABLE = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise the identity decorator."""
    if args and callable(args[0]) and len(args) == 1 and not kwargs:
        func = args[0]
        return _njit(cache=True)(func) if NUMBA_AVAILABLE else func

    def decorator(func):
        if NUMBA_AVAILABLE:
            kwargs.setdefault("cache", True)
            return _njit(*args, **kwargs)(func)
        return func
    return decorator


def default_backend():
    return "numba" if NUMBA_AVAILABLE else "numpy"
