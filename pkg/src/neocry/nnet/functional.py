"""Forward and backward kernels on NHWC float64 arrays.

Every ``*_backward`` returns exact gradients of the matching ``*_forward``.
Convolution is cross-correlation (no kernel flip) with filters laid out as
(kh, kw, in_channels, out_channels).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def same_padding(k: int) -> int:
    if k % 2 == 0:
        raise ValueError(f"'same' padding needs an odd kernel, got {k}")
    return k // 2


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))


def im2col(x, kh, kw, stride, pad):
    """Patches as rows of a (N*Ho*Wo, kh*kw*C) matrix, ordered (kh, kw, C)."""
    xp = _pad(x, pad)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    n, ho, wo, c = win.shape[:4]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)
    return cols, ho, wo


def conv2d_forward(x, filters, bias, stride=1, padding=0):
    """Returns (output, cache)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (N, H, W, C) input, got shape {x.shape}")
    kh, kw, cin, cout = filters.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d input channels {x.shape[3]} (input shape {x.shape}) "
                         f"!= filter depth {cin} (filter shape {filters.shape})")
    if x.shape[1] + 2 * padding < kh or x.shape[2] + 2 * padding < kw:
        raise ShapeError(f"filter {filters.shape[:2]} larger than padded input {x.shape[1:3]}")
    cols, ho, wo = im2col(x, kh, kw, stride, padding)
    out = cols @ filters.reshape(-1, cout)
    out += bias
    return out.reshape(x.shape[0], ho, wo, cout), (x.shape, cols, filters, stride, padding)


def conv2d_backward(grad, cache, need_input_grad=True):
    """Returns (input_grad or None, filter_grad, bias_grad)."""
    in_shape, cols, filters, stride, pad = cache
    kh, kw, cin, cout = filters.shape
    n, ho, wo, _ = grad.shape
    if grad.shape[3] != cout or n != in_shape[0]:
        raise ShapeError(f"upstream gradient shape {grad.shape} does not match conv output")
    g = grad.reshape(-1, cout)
    dfilters = (g.T @ cols).T.reshape(filters.shape)
    dbias = g.sum(axis=0)
    if not need_input_grad:
        return None, dfilters, dbias
    # scatter one kernel offset at a time; never materializes the full
    # (N*Ho*Wo, kh*kw*C) column gradient
    hp, wp = in_shape[1] + 2 * pad, in_shape[2] + 2 * pad
    dxp = np.zeros((n, hp, wp, cin))
    for i in range(kh):
        for j in range(kw):
            part = (g @ filters[i, j].T).reshape(n, ho, wo, cin)
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += part
    if pad:
        dxp = dxp[:, pad:pad + in_shape[1], pad:pad + in_shape[2], :]
    return dxp, dfilters, dbias


def _pool_check(x, size, stride):
    if x.ndim != 4:
        raise ShapeError(f"pooling expects (N, H, W, C) input, got shape {x.shape}")
    if size > x.shape[1] or size > x.shape[2]:
        raise ShapeError(f"pool window {size}x{size} larger than input {x.shape[1]}x{x.shape[2]}")


def maxpool_forward(x, size, stride=None):
    """Max over size x size windows. Ties go to the first element of the
    window in row-major order."""
    stride = size if stride is None else stride
    _pool_check(x, size, stride)
    n, h, w, c = x.shape
    ho, wo = (h - size) // stride + 1, (w - size) // stride + 1
    if stride == size:
        blocks = x[:, :ho * size, :wo * size, :].reshape(n, ho, size, wo, size, c)
        out = blocks.max(axis=(2, 4))
        return out, ("blocks", x, out, size)
    win = sliding_window_view(x, (size, size), axis=(1, 2))[:, ::stride, ::stride]
    flat = win.reshape(n, ho, wo, c, size * size)
    arg = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, ("windows", x.shape, arg, size, stride)


def _first_max_mask(blocks, out):
    mask = np.equal(blocks, out[:, :, None, :, None, :])
    if np.count_nonzero(mask) == out.size:
        return mask
    # ties: keep only the first maximum of each window in row-major order
    n, ho, size, wo, _, c = blocks.shape
    flat = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, size * size)
    arg = np.argmax(flat, axis=-1)
    first = np.zeros(flat.shape, dtype=bool)
    np.put_along_axis(first, arg[..., None], True, axis=-1)
    return first.reshape(n, ho, wo, c, size, size).transpose(0, 1, 4, 2, 5, 3)


def maxpool_backward(grad, cache):
    if cache[0] == "blocks":
        _, x, out, size = cache
        if grad.shape != out.shape:
            raise ShapeError(f"upstream gradient shape {grad.shape} != pool output {out.shape}")
        n, ho, wo, c = out.shape
        blocks = x[:, :ho * size, :wo * size, :].reshape(n, ho, size, wo, size, c)
        mask = _first_max_mask(blocks, out)
        dx = np.zeros(x.shape)
        if x.shape[1] == ho * size and x.shape[2] == wo * size:
            np.multiply(mask, grad[:, :, None, :, None, :], out=dx.reshape(blocks.shape))
        else:
            dx[:, :ho * size, :wo * size, :] = (
                mask * grad[:, :, None, :, None, :]).reshape(n, ho * size, wo * size, c)
        return dx
    _, in_shape, arg, size, stride = cache
    n, h, w, c = in_shape
    ho, wo = arg.shape[1:3]
    if grad.shape != arg.shape:
        raise ShapeError(f"upstream gradient shape {grad.shape} != pool output {arg.shape}")
    dx = np.zeros(in_shape)
    di, dj = np.divmod(arg, size)
    rows = np.arange(ho)[None, :, None, None] * stride + di
    cols = np.arange(wo)[None, None, :, None] * stride + dj
    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, None, None, :]
    np.add.at(dx, (nn, rows, cols, cc), grad)
    return dx


def avgpool_forward(x, size, stride=None):
    stride = size if stride is None else stride
    _pool_check(x, size, stride)
    win = sliding_window_view(x, (size, size), axis=(1, 2))[:, ::stride, ::stride]
    return win.mean(axis=(-2, -1)), (x.shape, size, stride)


def avgpool_backward(grad, cache):
    in_shape, size, stride = cache
    dx = np.zeros(in_shape)
    ho, wo = grad.shape[1:3]
    share = grad / (size * size)
    for i in range(size):
        for j in range(size):
            dx[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += share
    return dx


def dense_forward(x, weights, bias):
    if x.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense input {x.shape} incompatible with weights {weights.shape}")
    return x @ weights + bias, x


def dense_backward(grad, x, weights):
    return grad @ weights.T, x.T @ grad, grad.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(grad, mask):
    return grad * mask


def sigmoid(x):
    """Logistic function without overflow for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid_backward(grad, y):
    return grad * y * (1.0 - y)


def dropout_forward(x, keep, rng, training):
    """Inverted dropout: kept activations are divided by ``keep`` in training."""
    if not training or keep >= 1.0:
        return x, None
    mask = (rng.random(x.shape) < keep) / keep
    return x * mask, mask


def dropout_backward(grad, mask):
    return grad if mask is None else grad * mask


def concat_channels(xs):
    shapes = [x.shape for x in xs]
    if len({s[:3] for s in shapes}) != 1:
        raise ShapeError(f"concat needs equal (N, H, W); got shapes {shapes}")
    return np.concatenate(xs, axis=3), [s[3] for s in shapes]


def concat_channels_backward(grad, widths):
    return np.split(grad, np.cumsum(widths)[:-1], axis=3)
