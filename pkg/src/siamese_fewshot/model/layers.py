"""Forward/backward kernels for the reference backbone.

Activations are NCHW.  Each ``*_forward`` returns ``(out, cache)`` and the
matching ``*_backward`` consumes the cache.  Kernels run in the dtype of
their inputs so gradient checks can use float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv_out_size(n: int, kernel: int, stride: int) -> int:
    pad = kernel // 2
    return (n + 2 * pad - kernel) // stride + 1


def conv2d_forward(x, weight, bias, stride: int = 1):
    """'same'-style convolution (padding kernel // 2) via im2col."""
    f, c, k, _ = weight.shape
    pad = k // 2
    xp = _pad(x, pad)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    b, _, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
    out = cols @ weight.reshape(f, -1).T
    if bias is not None:
        out = out + bias
    out = out.reshape(b, ho, wo, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (cols, x.shape, stride)


def conv2d_backward(gout, weight, cache, with_bias: bool, need_input_grad: bool = True):
    cols, x_shape, stride = cache
    f, c, k, _ = weight.shape
    pad = k // 2
    b, _, h, w = x_shape
    _, _, ho, wo = gout.shape
    g2 = gout.transpose(0, 2, 3, 1).reshape(-1, f)
    gw = (g2.T @ cols).reshape(weight.shape)
    gb = g2.sum(axis=0) if with_bias else None
    if not need_input_grad:
        return None, gw, gb
    gcols = (g2 @ weight.reshape(f, -1)).reshape(b, ho, wo, c, k, k)
    gxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=gout.dtype)
    for di in range(k):
        for dj in range(k):
            gxp[:, :, di: di + stride * ho: stride, dj: dj + stride * wo: stride] += (
                gcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
            )
    gx = gxp[:, :, pad: pad + h, pad: pad + w] if pad else gxp
    return gx, gw, gb


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(gout, mask):
    return gout * mask


def maxpool_forward(x, size: int):
    b, c, h, w = x.shape
    ho, wo = h // size, w // size
    xc = x[:, :, : ho * size, : wo * size]
    win = xc.reshape(b, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, size * size)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape, size)


def maxpool_backward(gout, cache):
    arg, x_shape, size = cache
    b, c, h, w = x_shape
    ho, wo = gout.shape[2:]
    gwin = np.zeros((b, c, ho, wo, size * size), dtype=gout.dtype)
    np.put_along_axis(gwin, arg[..., None], gout[..., None], axis=-1)
    g = gwin.reshape(b, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * size, wo * size)
    gx = np.zeros(x_shape, dtype=gout.dtype)
    gx[:, :, : ho * size, : wo * size] = g
    return gx


def dense_forward(x, weight, bias):
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out, x


def dense_backward(gout, weight, x, with_bias: bool):
    return gout @ weight.T, x.T @ gout, (gout.sum(axis=0) if with_bias else None)


def l2norm_forward(x, eps: float = 1e-12):
    norm = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    norm = np.maximum(norm, eps)
    y = x / norm
    return y, (y, norm)


def l2norm_backward(gout, cache):
    y, norm = cache
    return (gout - y * np.sum(y * gout, axis=1, keepdims=True)) / norm


def softmax_xent(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    g = np.exp(logp)
    g[np.arange(n), labels] -= 1
    return float(loss), g / n
