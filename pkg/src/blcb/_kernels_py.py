"""Pure-numpy implementations of the hot kernels.

These are the reference versions; ``blcb._ckernels`` (Cython) must agree with
them bit-for-bit on float32/float64 inputs.  All image tensors are NHWC.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(xp, k, out_h, out_w):
    """Unfold a padded NHWC batch into a ``(N*out_h*out_w, k*k*C)`` matrix.

    Column order is (ky, kx, c), matching a ``(k, k, C, F)`` weight tensor.
    """
    xp = np.ascontiguousarray(xp)
    n, _, _, c = xp.shape
    s0, s1, s2, s3 = xp.strides
    view = as_strided(xp, (n, out_h, out_w, k, k, c), (s0, s1, s2, s1, s2, s3),
                      writeable=False)
    return view.reshape(n * out_h * out_w, k * k * c)


def col2im(cols, shape, k):
    """Adjoint of :func:`im2col`: scatter-add columns back into a padded batch."""
    n, hp, wp, c = shape
    out_h, out_w = hp - k + 1, wp - k + 1
    cols = cols.reshape(n, out_h, out_w, k, k, c)
    xp = np.zeros(shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, i:i + out_h, j:j + out_w, :] += cols[:, :, :, i, j, :]
    return xp


def conv2d_forward(x, weight, bias, relu=False):
    """Same-padded stride-1 convolution, NHWC input, ``(k, k, C, F)`` weight."""
    n, h, w, _ = x.shape
    k = weight.shape[0]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    out = im2col(xp, k, h, w) @ weight.reshape(-1, weight.shape[-1])
    out += bias
    if relu:
        np.maximum(out, 0, out=out)
    return out.reshape(n, h, w, -1)


def conv2d_backward(x, weight, dout):
    """Gradients ``(dx, dweight, dbias)`` of :func:`conv2d_forward`."""
    n, h, w, _ = x.shape
    k = weight.shape[0]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    cols = im2col(xp, k, h, w)
    d2 = dout.reshape(-1, dout.shape[-1])
    dw = (cols.T @ d2).reshape(weight.shape)
    db = d2.sum(axis=0)
    dxp = col2im(d2 @ weight.reshape(-1, weight.shape[-1]).T, xp.shape, k)
    return dxp[:, p:p + h, p:p + w, :], dw, db


def batchnorm_train_forward(x, gamma, beta, eps):
    """Batch statistics over all but the last axis; returns ``(out, xhat, mean, var)``."""
    axes = tuple(range(x.ndim - 1))
    mean = x.mean(axis=axes, dtype=np.float64)
    xc = x - mean
    var = np.mean(xc * xc, axis=axes)
    xhat = (xc / np.sqrt(var + eps)).astype(x.dtype)
    return (xhat * gamma + beta).astype(x.dtype), xhat, mean, var


def batchnorm_backward(dout, xhat, gamma, inv):
    """Returns ``(dx, dgamma, dbeta)`` given the cached ``xhat`` and 1/std."""
    axes = tuple(range(dout.ndim - 1))
    count = dout.size // dout.shape[-1]
    dbeta = dout.sum(axis=axes, dtype=np.float64)
    dgamma = (dout * xhat).sum(axis=axes, dtype=np.float64)
    dx = (gamma * inv) * (dout - (dbeta + xhat * dgamma) / count)
    return dx.astype(dout.dtype), dgamma.astype(dout.dtype), dbeta.astype(dout.dtype)


def maxpool2_forward(x):
    """2x2/stride-2 max pooling; odd trailing rows/cols are dropped.

    Returns the pooled batch and an int8 argmax code (0..3, row-major within
    the window, first maximum wins).
    """
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    x = x[:, :2 * h2, :2 * w2, :]
    a = x[:, 0::2, 0::2, :]
    b = x[:, 0::2, 1::2, :]
    cc = x[:, 1::2, 0::2, :]
    d = x[:, 1::2, 1::2, :]
    out = np.maximum(np.maximum(a, b), np.maximum(cc, d))
    arg = np.full(out.shape, 3, dtype=np.int8)
    arg[cc == out] = 2
    arg[b == out] = 1
    arg[a == out] = 0
    return out, arg


def maxpool2_backward(dout, arg, in_shape):
    n, h, w, c = in_shape
    h2, w2 = dout.shape[1], dout.shape[2]
    dx = np.zeros(in_shape, dtype=dout.dtype)
    for code, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        dx[:, di:2 * h2:2, dj:2 * w2:2, :] = np.where(arg == code, dout, 0)
    return dx


def binary_erode(mask, offsets, border_value=False):
    """AND of ``mask`` shifted by each ``(dr, dc)`` offset.

    ``out[r, c] = all(mask[r + dr, c + dc])`` with out-of-bounds reads taking
    ``border_value``.
    """
    h, w = mask.shape
    out = np.ones((h, w), dtype=bool)
    for dr, dc in offsets:
        out &= _shifted(mask, dr, dc, border_value)
    return out


def binary_dilate(mask, offsets):
    """OR of ``mask`` shifted by each ``-(dr, dc)`` offset (reflected SE)."""
    h, w = mask.shape
    out = np.zeros((h, w), dtype=bool)
    for dr, dc in offsets:
        out |= _shifted(mask, -dr, -dc, False)
    return out


def _shifted(mask, dr, dc, fill):
    # out[r, c] = mask[r + dr, c + dc]
    h, w = mask.shape
    out = np.full((h, w), fill, dtype=bool)
    r0, r1 = max(0, -dr), min(h, h - dr)
    c0, c1 = max(0, -dc), min(w, w - dc)
    if r0 < r1 and c0 < c1:
        out[r0:r1, c0:c1] = mask[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
    return out
