"""Backend switch for the compiled kernels.

Set ``H22STRIP_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
Kernels draw randomness only through ``np.random.seed`` and
``np.random.random`` which numba implements with the same Mersenne Twister
stream as numpy, so both backends produce identical results for a given seed.
"""
import functools
import os

import numpy as np

_FLAG = os.environ.get("H22STRIP_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if NUMBA_DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False


def _keep_global_state(fn):
    # the pure python path reseeds numpy's legacy global generator
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        state = np.random.get_state()
        try:
            return fn(*args, **kwargs)
        finally:
            np.random.set_state(state)

    wrapper.py_func = fn
    return wrapper


def kernel(fn):
    """Compile ``fn`` with numba when available, else return a python wrapper.

    In both cases ``.py_func`` is the uncompiled function.
    """
    if HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return _keep_global_state(fn)


def backend_name():
    return "numba" if HAVE_NUMBA else "python"
