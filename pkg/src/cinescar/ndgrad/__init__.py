"""Minimal dense-tensor engine with reverse-mode autodiff and Adam."""

from .nn import conv2d, maxpool2x2, upsample_nearest2x
from .ops import (
    abs,
    add,
    clip,
    concat,
    div,
    exp,
    getitem,
    log,
    mean,
    mul,
    neg,
    relu,
    reshape,
    scale,
    sigmoid,
    square,
    sub,
    sum,
)
from .optim import Adam, AdamState, adam_step
from .precision import get_dtype, get_precision, precision, set_precision
from .sampling import grid_sample
from .tensor import Tensor, as_tensor, is_grad_enabled, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "Tensor",
    "abs",
    "adam_step",
    "add",
    "as_tensor",
    "clip",
    "concat",
    "conv2d",
    "div",
    "exp",
    "get_dtype",
    "get_precision",
    "getitem",
    "grid_sample",
    "is_grad_enabled",
    "log",
    "maxpool2x2",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "precision",
    "relu",
    "reshape",
    "scale",
    "set_precision",
    "sigmoid",
    "square",
    "sub",
    "sum",
    "upsample_nearest2x",
]
