"""Numba availability probe and backend selection.

Hot kernels in :mod:`chirpvit.kernels` exist in two flavours: an ``@njit``
compiled loop version and a vectorized pure-numpy version.  Which one runs is
decided once at import time:

* numba missing        -> numpy path (with a warning),
* ``CHIRPVIT_NO_NUMBA`` set to anything but ``""``/``"0"`` -> numpy path,
* otherwise            -> compiled path.

``benchmarks/bench_kernels.py`` times both paths side by side.
"""

import os
import warnings

ENV_FLAG = "CHIRPVIT_NO_NUMBA"

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    numba = None
    HAS_NUMBA = False


def numpy_forced() -> bool:
    return os.environ.get(ENV_FLAG, "0") not in ("", "0")


USE_NUMBA = HAS_NUMBA and not numpy_forced()

if not HAS_NUMBA:  # pragma: no cover
    warnings.warn("numba is not installed; falling back to pure-numpy kernels")


def njit(func):
    """Compile ``func`` with numba (cached), or fail loudly if numba is absent."""
    if not HAS_NUMBA:  # pragma: no cover
        raise RuntimeError("numba is not available; cannot compile " + func.__name__)
    return numba.njit(cache=True)(func)
