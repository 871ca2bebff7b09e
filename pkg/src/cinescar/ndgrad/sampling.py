from __future__ import annotations

import numpy as np

from . import _bilinear
from .tensor import Tensor, as_tensor


def grid_sample(img: Tensor, flow: Tensor) -> Tensor:
    """Bilinear backward warp of ``img`` (N, C, H, W) by ``flow`` (N, 2, H, W).

    Sample positions outside the image are clamped to the border. Differentiable
    with respect to both the image and the flow.
    """
    img, flow = as_tensor(img), as_tensor(flow)
    if img.ndim != 4 or flow.ndim != 4:
        raise ValueError(f"grid_sample expects (N,C,H,W) image and (N,2,H,W) flow, got {img.shape} and {flow.shape}")
    n, _, h, w = img.shape
    if flow.shape != (n, 2, h, w):
        raise ValueError(f"grid_sample: image {img.shape} and flow {flow.shape} disagree")
    im = np.ascontiguousarray(img.data)
    fl = np.ascontiguousarray(flow.data)
    out = _bilinear.sample(im, fl)

    def backward(g):
        gimg, gflow = _bilinear.sample_backward(im, fl, np.ascontiguousarray(g))
        return gimg, gflow

    return Tensor._result(out, (img, flow), backward, "grid_sample")
