"""Elementwise, reduction and shape primitives with their backward rules.

Broadcasting is restricted to scalar-with-tensor: operands of a binary op
must either share a shape or one of them must hold a single element.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor

LOG_GUARD = 1e-12


def _check_pair(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ValueError(f"{op}: shape mismatch between {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    c = float(c)

    def backward(g):
        return (g * c,)

    return Tensor._result(a.data * c, (a,), backward, "scale")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "div")
    if np.any(b.data == 0):
        raise ZeroDivisionError("div: denominator contains zeros")

    def backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result(a.data / b.data, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def square(a: Tensor) -> Tensor:
    return Tensor._result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def abs(a: Tensor) -> Tensor:
    # subgradient 0 at the kink
    return Tensor._result(np.abs(a.data), (a,), lambda g: (np.sign(a.data) * g,), "abs")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._result(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return Tensor._result(e, (a,), lambda g: (g * e,), "exp")


def log(a: Tensor, guarded: bool = False) -> Tensor:
    """Natural log. The guarded variant clamps its input at 1e-12 from below."""
    x = a.data
    if guarded:
        safe = np.maximum(x, LOG_GUARD)
        live = x > LOG_GUARD

        def backward(g):
            return (np.where(live, g / safe, 0.0),)

        return Tensor._result(np.log(safe), (a,), backward, "log_guarded")
    if np.any(x <= 0):
        raise ValueError(f"log: input has non-positive entries (min {x.min():.3g}); use guarded=True")
    return Tensor._result(np.log(x), (a,), lambda g: (g / x,), "log")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor._result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def _norm_axes(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = np.sum(a.data, axis=axes)

    def backward(g):
        g = np.reshape(g, [1 if i in axes else n for i, n in enumerate(a.shape)])
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._result(out, (a,), backward, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axes), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors, axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (the channel axis by default)."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: empty tensor list")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ValueError(f"concat: shape mismatch between {ref} and {t.shape} off axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        out = []
        for i in range(len(tensors)):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(idx)])
        return tuple(out)

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def getitem(a: Tensor, key) -> Tensor:
    """Basic slicing (ints and slices only)."""
    parts = key if isinstance(key, tuple) else (key,)
    for part in parts:
        if not (isinstance(part, (int, slice, np.integer)) or part is Ellipsis):
            raise TypeError(f"slice: only basic indexing is supported, got {type(part).__name__}")
    view = a.data[key]
    view_shape = np.shape(view)

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = np.reshape(g, view_shape)
        return (full,)

    return Tensor._result(np.array(view), (a,), backward, "slice")
