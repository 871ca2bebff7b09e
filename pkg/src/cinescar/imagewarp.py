"""Spatial-transformer warping, flow composition, registration losses and resampling.

Flow fields are stored channel-first, shape (2, H, W) (or (N, 2, H, W) in a
batch): channel 0 is the horizontal displacement (columns), channel 1 the
vertical one (rows), both in pixels. They follow the backward-warp
convention: the vector stored at reference pixel (x, y) points into the
moving image, so ``warp(moving, flow)(x, y) = moving(x + dx, y + dy)``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import ndgrad as nd
from .ndgrad import Tensor


def _is_tensor(*values) -> bool:
    return any(isinstance(v, Tensor) for v in values)


def warp_bilinear(image, flow):
    """Backward-warp ``image`` by ``flow`` with bilinear sampling and border clamp.

    Accepts a single (H, W) image with a (2, H, W) flow, or a batch
    (N, C, H, W) with (N, 2, H, W). Returns a Tensor (differentiable in both
    arguments) when either input is a Tensor, otherwise a plain ndarray.
    """
    as_arrays = not _is_tensor(image, flow)
    image, flow = nd.as_tensor(image), nd.as_tensor(flow)
    single = image.ndim == 2
    if single:
        if flow.shape != (2,) + image.shape:
            raise ValueError(f"warp_bilinear: image {image.shape} and flow {flow.shape} disagree")
        image = nd.reshape(image, (1, 1) + image.shape)
        flow = nd.reshape(flow, (1,) + flow.shape)
    elif image.ndim != 4 or flow.ndim != 4 or flow.shape != (image.shape[0], 2) + image.shape[2:]:
        raise ValueError(f"warp_bilinear: image {image.shape} and flow {flow.shape} disagree")
    if as_arrays:
        with nd.no_grad():
            out = nd.grid_sample(image, flow)
    else:
        out = nd.grid_sample(image, flow)
    if single:
        out = nd.reshape(out, out.shape[2:])
    return out.data if as_arrays else out


def compose_flows(outer, inner):
    """Chain two backward flows: ``outer(p) + inner(p + outer(p))``.

    If ``outer`` maps reference coordinates into frame t-1 and ``inner`` maps
    frame t-1 coordinates into frame t, the result maps reference coordinates
    into frame t.
    """
    as_arrays = not _is_tensor(outer, inner)
    outer, inner = nd.as_tensor(outer), nd.as_tensor(inner)
    if outer.shape != inner.shape or outer.ndim not in (3, 4) or outer.shape[-3] != 2:
        raise ValueError(f"compose_flows: flow shapes {outer.shape} and {inner.shape} disagree")
    if as_arrays:
        with nd.no_grad():
            out = _compose(outer, inner)
        return out.data
    return _compose(outer, inner)


def _compose(outer: Tensor, inner: Tensor) -> Tensor:
    if outer.ndim == 3:
        sampled = nd.grid_sample(nd.reshape(inner, (1,) + inner.shape), nd.reshape(outer, (1,) + outer.shape))
        return nd.add(outer, nd.reshape(sampled, inner.shape))
    return nd.add(outer, nd.grid_sample(inner, outer))


def mse(a, b) -> Tensor:
    a, b = nd.as_tensor(a), nd.as_tensor(b)
    return nd.mean(nd.square(nd.sub(a, b)))


def motion_loss(reference, warped_frames: Sequence) -> Tensor:
    """Sum over frames of the pixel-mean squared error to the reference.

    Minimised as a positive quantity: lower means better alignment.
    """
    if len(warped_frames) == 0:
        raise ValueError("motion_loss: empty frame list")
    reference = nd.as_tensor(reference)
    total = None
    for frame in warped_frames:
        frame = nd.as_tensor(frame)
        if frame.shape != reference.shape:
            raise ValueError(f"motion_loss: frame shape {frame.shape} differs from reference {reference.shape}")
        term = mse(reference, frame)
        total = term if total is None else nd.add(total, term)
    return total


def smoothness_loss(flows: Sequence) -> Tensor:
    """Total absolute forward difference of each flow along x and y, summed over flows.

    Each flow may be (2, H, W) or a batch (N, 2, H, W); differences run over
    the last two axes and every channel.
    """
    if len(flows) == 0:
        raise ValueError("smoothness_loss: empty flow list")
    total = None
    for flow in flows:
        flow = nd.as_tensor(flow)
        if flow.ndim not in (3, 4) or flow.shape[-3] != 2:
            raise ValueError(f"smoothness_loss: expected a (…, 2, H, W) flow, got {flow.shape}")
        term = None
        if flow.shape[-1] > 1:
            dx = nd.sub(flow[..., :, 1:], flow[..., :, :-1])
            term = nd.sum(nd.abs(dx))
        if flow.shape[-2] > 1:
            dy = nd.sum(nd.abs(nd.sub(flow[..., 1:, :], flow[..., :-1, :])))
            term = dy if term is None else nd.add(term, dy)
        if term is None:
            term = nd.scale(nd.sum(flow), 0.0)
        total = term if total is None else nd.add(total, term)
    return total


def center_crop(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Centered window over the last two axes; odd margins put the extra pixel bottom/right."""
    h, w = image.shape[-2:]
    if out_h > h or out_w > w:
        raise ValueError(f"center_crop: requested {out_h}x{out_w} exceeds input {h}x{w}")
    top = (h - out_h) // 2
    left = (w - out_w) // 2
    return image[..., top : top + out_h, left : left + out_w].copy()


def _axis_weights(n_in: int, n_out: int):
    if n_out == 1 or n_in == 1:
        src = np.zeros(n_out)
    else:
        src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.clip(np.floor(src).astype(np.int64), 0, max(n_in - 2, 0))
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize of the last two axes (src = dst * (in-1)/(out-1))."""
    image = np.asarray(image)
    h, w = image.shape[-2:]
    y0, y1, fy = _axis_weights(h, out_h)
    x0, x1, fx = _axis_weights(w, out_w)
    rows = image[..., y0, :] * (1 - fy)[:, None] + image[..., y1, :] * fy[:, None]
    return rows[..., x0] * (1 - fx) + rows[..., x1] * fx


def downsample2x(image: np.ndarray) -> np.ndarray:
    """2x2 block mean over the last two axes (odd trailing row/column dropped)."""
    h, w = image.shape[-2:]
    h2, w2 = h // 2, w // 2
    trimmed = image[..., : 2 * h2, : 2 * w2]
    return trimmed.reshape(image.shape[:-2] + (h2, 2, w2, 2)).mean(axis=(-3, -1))


def identity_grid_flow(h: int, w: int, mapping) -> np.ndarray:
    """Flow whose samples land on ``mapping(x, y) -> (x', y')`` for every pixel."""
    ys, xs = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    tx, ty = mapping(xs, ys)
    return np.stack([tx - xs, ty - ys])


def sample_at(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear samples of ``image`` (..., H, W) at arbitrary (xs, ys), clamped to the border."""
    h, w = image.shape[-2:]
    cx = np.clip(xs, 0, w - 1)
    cy = np.clip(ys, 0, h - 1)
    x0 = np.clip(np.floor(cx).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(cy).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax, ay = cx - x0, cy - y0
    top = image[..., y0, x0] * (1 - ax) + image[..., y0, x1] * ax
    bot = image[..., y1, x0] * (1 - ax) + image[..., y1, x1] * ax
    return top * (1 - ay) + bot * ay


def upsample_flow(flow: np.ndarray, h: int, w: int) -> np.ndarray:
    """Carry a (2, h', w') flow from a 2x2-block-mean pyramid level to (2, h, w), doubling the vectors.

    Pixel centers line up under block averaging: fine x sits at coarse (x + 0.5) / s - 0.5.
    """
    ys, xs = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    scale_x, scale_y = w / flow.shape[-1], h / flow.shape[-2]
    sx, sy = (xs + 0.5) / scale_x - 0.5, (ys + 0.5) / scale_y - 0.5
    return np.stack([sample_at(flow[0], sx, sy) * scale_x, sample_at(flow[1], sx, sy) * scale_y])
