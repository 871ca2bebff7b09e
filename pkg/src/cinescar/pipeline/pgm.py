"""8-bit binary (P5) PGM previews."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255; a constant image maps to 0."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.uint8)
    return np.rint((img - lo) * (255.0 / (hi - lo))).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"write_pgm: expected a 2-d image, got shape {img.shape}")
    data = to_uint8(img)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a P5 PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def export_tensor(array: np.ndarray, out_dir, stem: str) -> list:
    """Write previews for a tensor; returns the paths written.

    (H, W) -> one image; (T, H, W) -> one per frame; (2, H, W) or
    (T-1, 2, H, W) flows -> a dx and a dy image per field.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(array)
    written = []

    def emit(name, img):
        p = out / f"{name}.pgm"
        write_pgm(p, img)
        written.append(p)

    if arr.ndim == 2:
        emit(stem, arr)
    elif arr.ndim == 3 and arr.shape[0] == 2 and stem.startswith("flow"):
        emit(f"{stem}_dx", arr[0])
        emit(f"{stem}_dy", arr[1])
    elif arr.ndim == 3:
        for t, img in enumerate(arr):
            emit(f"{stem}_{t:02d}", img)
    elif arr.ndim == 4 and arr.shape[1] == 2:
        for t, field in enumerate(arr):
            emit(f"{stem}_{t + 1:02d}_dx", field[0])
            emit(f"{stem}_{t + 1:02d}_dy", field[1])
    else:
        raise ValueError(f"export_tensor: cannot preview a tensor of shape {arr.shape}")
    return written
