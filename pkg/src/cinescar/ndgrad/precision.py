"""Global scalar precision run-mode (64-bit for checks, 32-bit for training)."""

import contextlib
import os

import numpy as np

_DTYPES = {32: np.float32, 64: np.float64}

_current_bits = int(os.environ.get("CINESCAR_PRECISION", "64"))
if _current_bits not in _DTYPES:
    raise ValueError(f"CINESCAR_PRECISION must be 32 or 64, got {_current_bits}")


def set_precision(bits: int) -> None:
    global _current_bits
    if bits not in _DTYPES:
        raise ValueError(f"precision must be 32 or 64 bits, got {bits}")
    _current_bits = bits


def get_precision() -> int:
    return _current_bits


def get_dtype():
    return _DTYPES[_current_bits]


@contextlib.contextmanager
def precision(bits: int):
    """Temporarily switch the run-mode precision."""
    previous = _current_bits
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(previous)
