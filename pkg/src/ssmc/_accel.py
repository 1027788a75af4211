"""Backend selection for the hot Monte Carlo loops.

Set ``SSMC_BACKEND=numpy`` (or ``SSMC_DISABLE_NUMBA=1``) before import to force
the vectorised numpy fallback; the default uses numba when it imports.
"""
import os

_flag = os.environ.get("SSMC_BACKEND", "").strip().lower()
_disabled = _flag == "numpy" or os.environ.get("SSMC_DISABLE_NUMBA", "") not in ("", "0")

try:
    if _disabled:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise the identity decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
