"""Raw numpy convolution kernels (NCHW, weights OIHW).

The three maps are mutually adjoint bilinear forms::

    <conv2d(x, w), g> == <x, conv2d_input_grad(g, w)> == <w, conv2d_weight_grad(x, g)>

which is all the autodiff layer needs to differentiate them to any order.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def out_size(n: int, k: int, stride: int, dilation: int, pad: int) -> int:
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def transpose_out_size(n: int, k: int, stride: int, dilation: int, pad: int) -> int:
    return (n - 1) * stride - 2 * pad + dilation * (k - 1) + 1


def _pad(x: np.ndarray, padding) -> np.ndarray:
    ph, pw = padding
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _columns(xp: np.ndarray, kh: int, kw: int, ho: int, wo: int, stride, dilation) -> np.ndarray:
    """Patch matrix of shape (B, C*kh*kw, ho*wo)."""
    B, C = xp.shape[:2]
    sb, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(B, C, kh, kw, ho, wo),
        strides=(sb, sc, sh * dilation[0], sw * dilation[1], sh * stride[0], sw * stride[1]),
        writeable=False,
    )
    return view.reshape(B, C * kh * kw, ho * wo)


def _is_pointwise(kh, kw, stride, padding) -> bool:
    return kh == 1 and kw == 1 and tuple(stride) == (1, 1) and tuple(padding) == (0, 0)


def conv2d(x: np.ndarray, w: np.ndarray, stride=(1, 1), dilation=(1, 1), padding=(0, 0)) -> np.ndarray:
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    ho = out_size(H, kh, stride[0], dilation[0], padding[0])
    wo = out_size(W, kw, stride[1], dilation[1], padding[1])
    w2 = w.reshape(O, -1)
    if _is_pointwise(kh, kw, stride, padding):
        return np.matmul(w2, x.reshape(B, C, H * W)).reshape(B, O, H, W)
    cols = _columns(_pad(x, padding), kh, kw, ho, wo, stride, dilation)
    return np.matmul(w2, cols).reshape(B, O, ho, wo)


def conv2d_input_grad(g: np.ndarray, w: np.ndarray, in_hw, stride=(1, 1), dilation=(1, 1), padding=(0, 0)) -> np.ndarray:
    """Adjoint of :func:`conv2d` in its input; also the transposed convolution."""
    B, O, ho, wo = g.shape
    _, C, kh, kw = w.shape
    H, W = in_hw
    w2 = w.reshape(O, -1)
    if _is_pointwise(kh, kw, stride, padding) and (ho, wo) == (H, W):
        return np.matmul(w2.T, g.reshape(B, O, ho * wo)).reshape(B, C, H, W)
    cols = np.matmul(w2.T, g.reshape(B, O, ho * wo)).reshape(B, C, kh, kw, ho, wo)
    ph, pw = padding
    sh, sw = stride
    dh, dw = dilation
    # rows beyond the last full window never touched the output; allocate enough to hold them
    Hp = max(H + 2 * ph, (kh - 1) * dh + sh * (ho - 1) + 1)
    Wp = max(W + 2 * pw, (kw - 1) * dw + sw * (wo - 1) + 1)
    xp = np.zeros((B, C, Hp, Wp), dtype=np.result_type(g, w))
    for i in range(kh):
        r0 = i * dh
        for j in range(kw):
            c0 = j * dw
            xp[:, :, r0 : r0 + sh * (ho - 1) + 1 : sh, c0 : c0 + sw * (wo - 1) + 1 : sw] += cols[:, :, i, j]
    return np.ascontiguousarray(xp[:, :, ph : ph + H, pw : pw + W])


def conv2d_weight_grad(x: np.ndarray, g: np.ndarray, kernel_hw, stride=(1, 1), dilation=(1, 1), padding=(0, 0)) -> np.ndarray:
    """Adjoint of :func:`conv2d` in its weight."""
    B, C, H, W = x.shape
    _, O, ho, wo = g.shape
    kh, kw = kernel_hw
    g2 = g.reshape(B, O, ho * wo)
    if _is_pointwise(kh, kw, stride, padding):
        cols = x.reshape(B, C, H * W)
    else:
        cols = _columns(_pad(x, padding), kh, kw, ho, wo, stride, dilation)
    gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2]))
    return gw.reshape(O, C, kh, kw)
