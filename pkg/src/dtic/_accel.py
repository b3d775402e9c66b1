"""Numba switch.

Set ``DTIC_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when numba
is importable. The flag is read once at import time.
"""
import os
import warnings

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

DISABLE_NUMBA = os.environ.get("DTIC_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")
USE_NUMBA = HAVE_NUMBA and not DISABLE_NUMBA


def njit(func):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def set_threads(n):
    """Cap numba and BLAS thread pools at ``n``."""
    n = max(1, int(n))
    if HAVE_NUMBA:
        with warnings.catch_warnings():
            # probing threading layers can warn about an old TBB; a fallback layer is used
            warnings.simplefilter("ignore", numba.NumbaWarning)
            numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return None
    return threadpool_limits(limits=n)
