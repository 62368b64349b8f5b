"""Differentiable operations.

Every backward rule below is expressed with these same operations, which is
what makes second derivatives (the gradient penalty) work.
"""
from __future__ import annotations

import numbers
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .tensor import Tensor, record


def _pair(v) -> tuple[int, int]:
    if isinstance(v, numbers.Integral):
        return (int(v), int(v))
    a, b = v
    return (int(a), int(b))


def as_tensor(v, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(v, Tensor):
        return v
    dtype = like.dtype if like is not None else None
    return Tensor._wrap(np.asarray(v, dtype=dtype if dtype is not None else np.float64))


def constant(arr: np.ndarray) -> Tensor:
    return Tensor._wrap(arr)


def _axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise IndexError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


# -- broadcasting plumbing ------------------------------------------------------


def sum_to(x: Tensor, shape: tuple) -> Tensor:
    """Sum ``x`` down to a broadcast-compatible ``shape``."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and x.shape[lead + i] != 1
    )
    data = x.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(shape)
    return record(data, (x,), lambda g: (broadcast_to(g, x.shape),), "sum_to")


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    return record(data, (x,), lambda g: (sum_to(g, x.shape),), "broadcast_to")


# -- elementwise ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _binary(a, b)

    def bw(g):
        return (sum_to(g, a.shape) if a.requires_grad else None,
                sum_to(g, b.shape) if b.requires_grad else None)

    return record(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)

    def bw(g):
        return (sum_to(g, a.shape) if a.requires_grad else None,
                sum_to(neg(g), b.shape) if b.requires_grad else None)

    return record(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)

    def bw(g):
        return (sum_to(mul(g, b), a.shape) if a.requires_grad else None,
                sum_to(mul(g, a), b.shape) if b.requires_grad else None)

    return record(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _binary(a, b)
    out_data = a.data / b.data

    def bw(g):
        ga = sum_to(div(g, b), a.shape) if a.requires_grad else None
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape) if b.requires_grad else None
        return ga, gb

    return record(out_data, (a, b), bw, "div")


def neg(x: Tensor) -> Tensor:
    return record(-x.data, (x,), lambda g: (neg(g),), "neg")


def _binary(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    return a, b


def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(x.dtype)
    return record(x.data * mask, (x,), lambda g: (mul(g, constant(mask)),), "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return record(x.data * scale, (x,), lambda g: (mul(g, constant(scale)),), "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = None

    def bw(g):
        return (mul(g, sub(1.0, mul(out, out))),)

    out = record(y, (x,), bw, "tanh")
    return out


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    out = None

    def bw(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = record(y, (x,), bw, "sigmoid")
    return out


def sqrt(x: Tensor) -> Tensor:
    """Square root whose derivative at 0 is taken as 0 rather than infinity."""
    y = np.sqrt(x.data)
    out = None

    def bw(g):
        zero = out.data == 0
        safe = add(out, constant(zero.astype(out.dtype)))
        scale = constant(np.where(zero, 0.0, 0.5).astype(out.dtype))
        return (mul(div(g, safe), scale),)

    out = record(y, (x,), bw, "sqrt")
    return out


def square(x: Tensor) -> Tensor:
    return mul(x, x)


# -- reductions and shape -------------------------------------------------------


def _axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, numbers.Integral):
        axis = (axis,)
    return tuple(sorted(_axis(a, ndim) for a in axis))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _axes(axis, x.ndim)
    data = x.data.sum(axis=axes, keepdims=keepdims)
    kept = tuple(1 if i in axes else n for i, n in enumerate(x.shape))

    def bw(g):
        return (broadcast_to(reshape(g, kept), x.shape),)

    return record(np.asarray(data), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axes, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if x.shape == shape:
        return x
    return record(x.data.reshape(shape), (x,), lambda g: (reshape(g, x.shape),), "reshape")


def transpose(x: Tensor, perm: Optional[Sequence[int]] = None) -> Tensor:
    perm = tuple(reversed(range(x.ndim))) if perm is None else tuple(perm)
    inv = tuple(np.argsort(perm))
    data = np.ascontiguousarray(x.data.transpose(perm))
    return record(data, (x,), lambda g: (transpose(g, inv),), "transpose")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        return (matmul(g, transpose(b)) if a.requires_grad else None,
                matmul(transpose(a), g) if b.requires_grad else None)

    return record(a.data @ b.data, (a, b), bw, "matmul")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    ax = _axis(axis, ndim)
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax):
            raise ValueError(
                f"concat along axis {ax}: incompatible shapes {[tt.shape for tt in tensors]}"
            )
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        return tuple(slice_axis(g, ax, int(bounds[i]), int(bounds[i + 1])) for i in range(len(tensors)))

    return record(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ax = _axis(axis, x.ndim)
    n = x.shape[ax]
    if not 0 <= start < stop <= n:
        raise IndexError(f"slice [{start}:{stop}) out of bounds for extent {n} on axis {ax}")
    if start == 0 and stop == n:
        return x
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    data = np.ascontiguousarray(x.data[tuple(idx)])
    return record(data, (x,), lambda g: (pad_axis(g, ax, start, n),), "slice")


def pad_axis(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Embed ``x`` into zeros of extent ``length`` along ``axis`` at ``start``."""
    ax = _axis(axis, x.ndim)
    stop = start + x.shape[ax]
    if start < 0 or stop > length:
        raise IndexError(f"pad_axis: [{start}:{stop}) does not fit extent {length}")
    shape = list(x.shape)
    shape[ax] = length
    data = np.zeros(shape, dtype=x.dtype)
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    data[tuple(idx)] = x.data
    return record(data, (x,), lambda g: (slice_axis(g, ax, start, stop),), "pad")


def flip(x: Tensor, axis: int = -1) -> Tensor:
    ax = _axis(axis, x.ndim)
    data = np.ascontiguousarray(np.flip(x.data, axis=ax))
    return record(data, (x,), lambda g: (flip(g, ax),), "flip")


def horizontal_flip(x: Tensor) -> Tensor:
    return flip(x, -1)


# -- convolution ----------------------------------------------------------------


def _conv(x: Tensor, w: Tensor, stride, dilation, padding) -> Tensor:
    def bw(g):
        gx = _conv_input_adj(g, w, x.shape[2:], stride, dilation, padding) if x.requires_grad else None
        gw = _conv_weight_adj(x, g, w.shape[2:], stride, dilation, padding) if w.requires_grad else None
        return gx, gw

    data = kernels.conv2d(x.data, w.data, stride, dilation, padding)
    return record(data, (x, w), bw, "conv2d")


def _conv_input_adj(g: Tensor, w: Tensor, in_hw, stride, dilation, padding) -> Tensor:
    def bw(h):
        gg = _conv(h, w, stride, dilation, padding) if g.requires_grad else None
        gw = _conv_weight_adj(h, g, w.shape[2:], stride, dilation, padding) if w.requires_grad else None
        return gg, gw

    data = kernels.conv2d_input_grad(g.data, w.data, tuple(in_hw), stride, dilation, padding)
    return record(data, (g, w), bw, "conv2d_input_adj")


def _conv_weight_adj(x: Tensor, g: Tensor, kernel_hw, stride, dilation, padding) -> Tensor:
    def bw(v):
        gx = _conv_input_adj(g, v, x.shape[2:], stride, dilation, padding) if x.requires_grad else None
        gg = _conv(x, v, stride, dilation, padding) if g.requires_grad else None
        return gx, gg

    data = kernels.conv2d_weight_grad(x.data, g.data, tuple(kernel_hw), stride, dilation, padding)
    return record(data, (x, g), bw, "conv2d_weight_adj")


def _add_channel_bias(y: Tensor, bias: Optional[Tensor]) -> Tensor:
    if bias is None:
        return y
    return add(y, reshape(bias, (1, bias.shape[0], 1, 1)))


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride=1, dilation=1, padding=0) -> Tensor:
    """Cross-correlation of a BCHW input with an OIKhKw weight."""
    stride, dilation, padding = _pair(stride), _pair(dilation), _pair(padding)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"conv2d channel mismatch: input has {x.shape[1]} channels, weight expects {weight.shape[1]}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"conv2d bias shape {bias.shape} != ({weight.shape[0]},)")
    ho = kernels.out_size(x.shape[2], weight.shape[2], stride[0], dilation[0], padding[0])
    wo = kernels.out_size(x.shape[3], weight.shape[3], stride[1], dilation[1], padding[1])
    if ho < 1 or wo < 1:
        raise ValueError(
            f"conv2d output would be {ho}x{wo} for input {x.shape[2:]} kernel {weight.shape[2:]} "
            f"stride {stride} dilation {dilation} padding {padding}"
        )
    return _add_channel_bias(_conv(x, weight, stride, dilation, padding), bias)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride=1, padding=0, dilation=1) -> Tensor:
    """Transposed convolution; ``weight`` has layout (in, out, Kh, Kw)."""
    stride, dilation, padding = _pair(stride), _pair(dilation), _pair(padding)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv_transpose2d expects 4-d tensors, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ValueError(
            f"conv_transpose2d channel mismatch: input has {x.shape[1]} channels, weight expects {weight.shape[0]}"
        )
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ValueError(f"conv_transpose2d bias shape {bias.shape} != ({weight.shape[1]},)")
    ho = kernels.transpose_out_size(x.shape[2], weight.shape[2], stride[0], dilation[0], padding[0])
    wo = kernels.transpose_out_size(x.shape[3], weight.shape[3], stride[1], dilation[1], padding[1])
    if ho < 1 or wo < 1:
        raise ValueError(f"conv_transpose2d output would be {ho}x{wo} for input {x.shape[2:]}")
    return _add_channel_bias(_conv_input_adj(x, weight, (ho, wo), stride, dilation, padding), bias)


# -- normalization ----------------------------------------------------------------


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel standardization over H x W followed by an affine map."""
    if eps <= 0:
        raise ValueError("instance_norm needs eps > 0")
    if x.ndim != 4:
        raise ValueError(f"instance_norm expects BCHW input, got {x.shape}")
    C = x.shape[1]
    xc = sub(x, mean(x, axis=(2, 3), keepdims=True))
    var = mean(mul(xc, xc), axis=(2, 3), keepdims=True)
    xhat = div(xc, sqrt(add(var, eps)))
    return add(mul(xhat, reshape(gamma, (1, C, 1, 1))), reshape(beta, (1, C, 1, 1)))


def row_norm(x: Tensor) -> Tensor:
    """L2 norm over all non-batch axes; returns shape (B,)."""
    flat = reshape(x, (x.shape[0], x.size // x.shape[0]))
    return sqrt(sum(mul(flat, flat), axis=1))


# -- Tensor operator sugar ----------------------------------------------------------

Tensor.__add__ = lambda a, b: add(a, b)
Tensor.__radd__ = lambda a, b: add(b, a)
Tensor.__sub__ = lambda a, b: sub(a, b)
Tensor.__rsub__ = lambda a, b: sub(b, a)
Tensor.__mul__ = lambda a, b: mul(a, b)
Tensor.__rmul__ = lambda a, b: mul(b, a)
Tensor.__truediv__ = lambda a, b: div(a, b)
Tensor.__rtruediv__ = lambda a, b: div(b, a)
Tensor.__neg__ = lambda a: neg(a)
Tensor.__matmul__ = lambda a, b: matmul(a, b)
Tensor.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 and not isinstance(shape[0], int) else shape)
Tensor.sum = lambda self, axis=None, keepdims=False: sum(self, axis, keepdims)
Tensor.mean = lambda self, axis=None, keepdims=False: mean(self, axis, keepdims)
Tensor.T = property(lambda self: transpose(self))
