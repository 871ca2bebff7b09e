"""TNS1 binary tensor container.

Layout: magic ``b"TNS1"``, one dtype byte (1 = float32, 2 = float64), one rank
byte, ``rank`` little-endian uint32 dimensions, then the row-major
little-endian payload.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import DataError

MAGIC = b"TNS1"
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_BY_DTYPE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def encode(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype not in _BY_DTYPE:
        # masks and other non-float data are stored as float32
        arr = arr.astype(np.float32)
    code = _BY_DTYPE[arr.dtype]
    if arr.ndim > 255:
        raise ValueError(f"tensorfile: rank {arr.ndim} does not fit in one byte")
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()


def decode(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(blob) < 6 or blob[:4] != MAGIC:
        raise DataError(f"{source}: not a TNS1 tensor file")
    code, rank = blob[4], blob[5]
    if code not in _CODES:
        raise DataError(f"{source}: unknown dtype code {code}")
    head = 6 + 4 * rank
    if len(blob) < head:
        raise DataError(f"{source}: truncated header")
    dims = struct.unpack(f"<{rank}I", blob[6:head])
    dtype = _CODES[code]
    expected = dtype.itemsize * int(np.prod(dims, dtype=np.int64))
    if len(blob) - head != expected:
        raise DataError(f"{source}: payload is {len(blob) - head} bytes, expected {expected} for shape {dims}")
    return np.frombuffer(blob, dtype=dtype, offset=head).reshape(dims).astype(dtype.newbyteorder("="))


def write(path, array) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(array))


def read(path) -> np.ndarray:
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    return decode(blob, path)
