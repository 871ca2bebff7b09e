"""Bilinear grid-sampling kernels (border clamp), numba and numpy flavours.

Coordinates: x = column, y = row. Output pixel (y, x) of batch item n samples
``img[n]`` at (x + flow[n, 0, y, x], y + flow[n, 1, y, x]) after clamping the
sample position into [0, W-1] x [0, H-1].
"""

import numpy as np

from .._accel import njit, pick


# -- numpy ---------------------------------------------------------------------
def _corners(flow, h, w):
    ys, xs = np.meshgrid(np.arange(h, dtype=flow.dtype), np.arange(w, dtype=flow.dtype), indexing="ij")
    sx = xs + flow[:, 0]
    sy = ys + flow[:, 1]
    inx = (sx >= 0) & (sx <= w - 1)
    iny = (sy >= 0) & (sy <= h - 1)
    cx = np.clip(sx, 0, w - 1)
    cy = np.clip(sy, 0, h - 1)
    x0 = np.clip(np.floor(cx), 0, max(w - 2, 0)).astype(np.int64)
    y0 = np.clip(np.floor(cy), 0, max(h - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = cx - x0
    ay = cy - y0
    n = flow.shape[0]
    flat = lambda yy, xx: (yy * w + xx).reshape(n, 1, h * w)
    return flat(y0, x0), flat(y0, x1), flat(y1, x0), flat(y1, x1), ax, ay, inx, iny


def _gather(plane, idx):
    return np.take_along_axis(plane, np.broadcast_to(idx, (plane.shape[0], plane.shape[1], idx.shape[2])), axis=2)


def sample_numpy(img, flow):
    n, c, h, w = img.shape
    i00, i01, i10, i11, ax, ay, _, _ = _corners(flow, h, w)
    plane = img.reshape(n, c, h * w)
    ax = ax.reshape(n, 1, h * w)
    ay = ay.reshape(n, 1, h * w)
    top = (1 - ax) * _gather(plane, i00) + ax * _gather(plane, i01)
    bot = (1 - ax) * _gather(plane, i10) + ax * _gather(plane, i11)
    return ((1 - ay) * top + ay * bot).reshape(n, c, h, w)


def sample_backward_numpy(img, flow, gout):
    n, c, h, w = img.shape
    i00, i01, i10, i11, ax, ay, inx, iny = _corners(flow, h, w)
    hw = h * w
    plane = img.reshape(n, c, hw)
    g = gout.reshape(n, c, hw)
    ax = ax.reshape(n, 1, hw)
    ay = ay.reshape(n, 1, hw)
    v00, v01, v10, v11 = (_gather(plane, i) for i in (i00, i01, i10, i11))

    gx = np.sum(g * ((1 - ay) * (v01 - v00) + ay * (v11 - v10)), axis=1) * inx.reshape(n, hw)
    gy = np.sum(g * ((1 - ax) * (v10 - v00) + ax * (v11 - v01)), axis=1) * iny.reshape(n, hw)
    gflow = np.stack([gx, gy], axis=1).reshape(n, 2, h, w)

    base = (np.arange(n * c, dtype=np.int64) * hw).reshape(n, c, 1)
    idx = np.concatenate([(base + i).ravel() for i in (i00, i01, i10, i11)])
    wts = np.concatenate([
        (g * (1 - ax) * (1 - ay)).ravel(),
        (g * ax * (1 - ay)).ravel(),
        (g * (1 - ax) * ay).ravel(),
        (g * ax * ay).ravel(),
    ])
    gimg = np.bincount(idx, weights=wts, minlength=n * c * hw).astype(img.dtype).reshape(n, c, h, w)
    return gimg, gflow.astype(img.dtype)


# -- numba ---------------------------------------------------------------------
@njit
def _corner(pos, size):
    inside = pos >= 0.0 and pos <= size - 1
    p = min(max(pos, 0.0), size - 1.0)
    i0 = int(np.floor(p))
    hi = size - 2 if size >= 2 else 0
    if i0 > hi:
        i0 = hi
    if i0 < 0:
        i0 = 0
    i1 = min(i0 + 1, size - 1)
    return i0, i1, p - i0, inside


@njit
def sample_numba(img, flow):
    n, c, h, w = img.shape
    out = np.empty_like(img)
    for b in range(n):
        for y in range(h):
            for x in range(w):
                x0, x1, ax, _ = _corner(x + flow[b, 0, y, x], w)
                y0, y1, ay, _ = _corner(y + flow[b, 1, y, x], h)
                for ch in range(c):
                    top = (1 - ax) * img[b, ch, y0, x0] + ax * img[b, ch, y0, x1]
                    bot = (1 - ax) * img[b, ch, y1, x0] + ax * img[b, ch, y1, x1]
                    out[b, ch, y, x] = (1 - ay) * top + ay * bot
    return out


@njit
def sample_backward_numba(img, flow, gout):
    n, c, h, w = img.shape
    gimg = np.zeros_like(img)
    gflow = np.zeros((n, 2, h, w), dtype=img.dtype)
    for b in range(n):
        for y in range(h):
            for x in range(w):
                x0, x1, ax, inx = _corner(x + flow[b, 0, y, x], w)
                y0, y1, ay, iny = _corner(y + flow[b, 1, y, x], h)
                sx = 0.0
                sy = 0.0
                for ch in range(c):
                    g = gout[b, ch, y, x]
                    v00 = img[b, ch, y0, x0]
                    v01 = img[b, ch, y0, x1]
                    v10 = img[b, ch, y1, x0]
                    v11 = img[b, ch, y1, x1]
                    sx += g * ((1 - ay) * (v01 - v00) + ay * (v11 - v10))
                    sy += g * ((1 - ax) * (v10 - v00) + ax * (v11 - v01))
                    gimg[b, ch, y0, x0] += g * (1 - ax) * (1 - ay)
                    gimg[b, ch, y0, x1] += g * ax * (1 - ay)
                    gimg[b, ch, y1, x0] += g * (1 - ax) * ay
                    gimg[b, ch, y1, x1] += g * ax * ay
                if inx:
                    gflow[b, 0, y, x] = sx
                if iny:
                    gflow[b, 1, y, x] = sy
    return gimg, gflow


sample = pick(sample_numba, sample_numpy)
sample_backward = pick(sample_backward_numba, sample_backward_numpy)
