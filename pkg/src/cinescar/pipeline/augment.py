"""Joint spatial augmentation of frames, flows and masks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .. import imagewarp as iw
from .. import ndgrad as nd

MAX_ROTATION_DEG = 30.0
MAX_BLUR_SIGMA = 1.0


@dataclass
class Sample:
    frames: np.ndarray  # (T, H, W)
    flows: Optional[np.ndarray]  # (T-1, 2, H, W) or None
    masks: np.ndarray  # (K, H, W) binary

    def __post_init__(self):
        hw = self.frames.shape[-2:]
        if self.masks.shape[-2:] != hw or (self.flows is not None and self.flows.shape[-2:] != hw):
            raise ValueError("Sample: frames, flows and masks must share the spatial shape")


@dataclass(frozen=True)
class Draw:
    hflip: bool = False
    vflip: bool = False
    angle_deg: float = 0.0
    blur_sigma: float = 0.0


def draw(rng: np.random.Generator) -> Draw:
    """One augmentation draw; always consumes four variates in a fixed order."""
    u_h, u_v = rng.random(), rng.random()
    angle = rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG)
    sigma = rng.uniform(0.0, MAX_BLUR_SIGMA)
    return Draw(bool(u_h < 0.5), bool(u_v < 0.5), float(angle), float(sigma))


def _rotation_flow(h: int, w: int, angle_deg: float) -> np.ndarray:
    # output pixel q samples the input at R^-1 (q - c) + c
    a = math.radians(angle_deg)
    ca, sa = math.cos(a), math.sin(a)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0

    def inverse(xs, ys):
        dx, dy = xs - cx, ys - cy
        return cx + ca * dx + sa * dy, cy - sa * dx + ca * dy

    return iw.identity_grid_flow(h, w, inverse)


def _resample(stack: np.ndarray, grid: np.ndarray) -> np.ndarray:
    # stack (K, H, W) sampled through one (2, H, W) grid flow, in 64-bit
    k = stack.shape[0]
    with nd.precision(64):
        out = iw.warp_bilinear(stack[None].astype(np.float64), np.asarray(grid[None], dtype=np.float64))
    return out.reshape((k,) + stack.shape[1:])


def apply(sample: Sample, d: Draw) -> Sample:
    frames = sample.frames
    flows = sample.flows
    masks = sample.masks.astype(np.float64)
    if d.hflip:
        frames, masks = frames[..., ::-1], masks[..., ::-1]
        if flows is not None:
            flows = flows[..., ::-1] * np.array([-1.0, 1.0])[:, None, None]
    if d.vflip:
        frames, masks = frames[..., ::-1, :], masks[..., ::-1, :]
        if flows is not None:
            flows = flows[..., ::-1, :] * np.array([1.0, -1.0])[:, None, None]
    if d.angle_deg != 0.0:
        h, w = frames.shape[-2:]
        grid = _rotation_flow(h, w, d.angle_deg)
        frames = _resample(frames, grid)
        masks = _resample(masks, grid)
        if flows is not None:
            t = flows.shape[0]
            moved = _resample(flows.reshape((2 * t,) + flows.shape[-2:]), grid).reshape(flows.shape)
            a = math.radians(d.angle_deg)
            ca, sa = math.cos(a), math.sin(a)
            flows = np.stack([ca * moved[:, 0] - sa * moved[:, 1], sa * moved[:, 0] + ca * moved[:, 1]], axis=1)
        masks = (masks >= 0.5).astype(np.float64)
    if d.blur_sigma > 0:
        frames = gaussian_filter(np.asarray(frames, dtype=np.float64), sigma=(0, d.blur_sigma, d.blur_sigma), mode="nearest")
    return Sample(
        np.ascontiguousarray(frames, dtype=sample.frames.dtype),
        None if flows is None else np.ascontiguousarray(flows, dtype=sample.flows.dtype),
        np.ascontiguousarray(masks).astype(sample.masks.dtype),
    )


def augment(sample: Sample, seed) -> Sample:
    """Random flips, rotation within +-30 degrees and Gaussian blur (images only).

    ``seed`` is an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return apply(sample, draw(rng))
