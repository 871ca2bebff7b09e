"""Backend switch for the hot numeric kernels.

Every kernel module ships a numba ``@njit`` version and a pure-numpy version
of each routine. The numba path is used when numba imports cleanly and the
environment variable ``CINESCAR_DISABLE_NUMBA`` is unset (or ``0``).
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("CINESCAR_DISABLE_NUMBA", "0") in ("", "0")


def njit(func):
    """Compile ``func`` with numba when available, otherwise return it unchanged."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def pick(numba_impl, numpy_impl):
    return numba_impl if USE_NUMBA else numpy_impl


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
