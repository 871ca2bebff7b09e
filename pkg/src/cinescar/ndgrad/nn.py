"""Convolution, pooling and upsampling primitives on NCHW tensors."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Patch matrix of shape (C*kh*kw, N*ho*wo); rows ordered (c, i, j) to match the weight layout."""
    n, c = xp.shape[:2]
    xc = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xc[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(c * kh * kw, n * ho * wo)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int | None = None) -> Tensor:
    """2-D cross-correlation with zero padding.

    Args:
        x: input of shape (N, C_in, H, W).
        weight: kernel of shape (C_out, C_in, kh, kw).
        bias: optional (C_out,) offsets.
        stride: 1 or 2.
        padding: zero padding on every side; defaults to ``kh // 2`` ("same" for odd kernels at stride 1).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv2d: input has {c} channels but weight {weight.shape} expects {ci}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    pad = kh // 2 if padding is None else padding
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(co, -1)
    out = wmat @ cols
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (co,):
            raise ValueError(f"conv2d: bias shape {bias.shape} does not match {co} output channels")
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(co, n, ho, wo).transpose(1, 0, 2, 3))

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(co, n * ho * wo)
        gw = (gmat @ cols.T).reshape(weight.shape)
        gcols = (wmat.T @ gmat).reshape(c, kh, kw, n, ho, wo)
        gxp = np.zeros((c, n) + xp.shape[2:], dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, i, j]
        gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        gb = gmat.sum(axis=1) if bias is not None else None
        return np.ascontiguousarray(gx.transpose(1, 0, 2, 3)), gw, gb

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._result(out, parents, backward, "conv2d")


def maxpool2x2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2: spatial dims must be even, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return Tensor._result(out, (x,), backward, "maxpool2x2")


def upsample_nearest2x(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor._result(out, (x,), backward, "upsample_nearest2x")
