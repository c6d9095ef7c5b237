# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``; same signatures, same results."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(xp, int k, int out_h, int out_w):
    xp = np.ascontiguousarray(xp)
    if xp.dtype == np.float32:
        return _im2col[float](xp, k, out_h, out_w)
    if xp.dtype == np.float64:
        return _im2col[double](xp, k, out_h, out_w)
    raise TypeError(f"unsupported dtype {xp.dtype}")


cdef _im2col(real[:, :, :, ::1] xp, int k, int out_h, int out_w):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[3]
    cdef Py_ssize_t row = k * k * c, span = k * c
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n * out_h * out_w, row), dtype=dtype)
    cdef real[:, ::1] o = out
    cdef Py_ssize_t b, y, x, ky, r = 0
    cdef size_t nbytes = span * sizeof(real)
    with nogil:
        for b in range(n):
            for y in range(out_h):
                for x in range(out_w):
                    for ky in range(k):
                        memcpy(&o[r, ky * span], &xp[b, y + ky, x, 0], nbytes)
                    r += 1
    return out



cdef inline void _gemm(char transa, char transb, int m, int n, int k, real alpha,
                       real* a, int lda, real* b, int ldb, real beta,
                       real* c, int ldc) noexcept nogil:
    # Column-major BLAS; callers pass row-major operands in swapped order.
    if real is float:
        sgemm(&transa, &transb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        dgemm(&transa, &transb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


cdef inline void _copy(real* dst, real* src, Py_ssize_t count) noexcept nogil:
    cdef Py_ssize_t i
    if count >= 32:
        memcpy(dst, src, count * sizeof(real))
    else:
        for i in range(count):
            dst[i] = src[i]


cdef inline void _zero(real* dst, Py_ssize_t count) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(count):
        dst[i] = 0


cdef inline void _fill_cols(real[:, :, :, ::1] x, Py_ssize_t img, int k,
                            real* cols) noexcept nogil:
    # Row (y, x) of ``cols`` holds the zero-padded k*k*C neighbourhood.
    cdef Py_ssize_t h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t p = k // 2, row = k * k * c
    cdef Py_ssize_t y, xx, ky, kx, yy, x0, r = 0
    cdef real* dst
    for y in range(h):
        for xx in range(w):
            dst = cols + r * row
            x0 = xx - p
            for ky in range(k):
                yy = y + ky - p
                if yy < 0 or yy >= h:
                    _zero(dst + ky * k * c, k * c)
                elif x0 >= 0 and x0 + k <= w:
                    _copy(dst + ky * k * c, &x[img, yy, x0, 0], k * c)
                else:
                    for kx in range(k):
                        if 0 <= x0 + kx < w:
                            _copy(dst + (ky * k + kx) * c, &x[img, yy, x0 + kx, 0], c)
                        else:
                            _zero(dst + (ky * k + kx) * c, c)
            r += 1


def conv2d_forward(x, weight, bias, relu=False):
    """Same-padded stride-1 convolution, NHWC input, ``(k, k, C, F)`` weight."""
    x = np.ascontiguousarray(x)
    weight = np.ascontiguousarray(weight, dtype=x.dtype)
    bias = np.ascontiguousarray(bias, dtype=x.dtype)
    if x.dtype == np.float32:
        return _conv_fwd[float](x, weight, bias, relu)
    if x.dtype == np.float64:
        return _conv_fwd[double](x, weight, bias, relu)
    raise TypeError(f"unsupported dtype {x.dtype}")


cdef _conv_fwd(real[:, :, :, ::1] x, real[:, :, :, ::1] weight, real[::1] bias, bint relu):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef int k = weight.shape[0], f = weight.shape[3]
    cdef int kk = k * k * x.shape[3], m = h * w
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, h, w, f), dtype=dtype)
    buf = np.empty((m, kk), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    cdef real[:, ::1] cols = buf
    cdef Py_ssize_t img, r, j
    cdef real* op
    with nogil:
        for img in range(n):
            _fill_cols(x, img, k, &cols[0, 0])
            op = &o[img, 0, 0, 0]
            for r in range(m):
                for j in range(f):
                    op[r * f + j] = bias[j]
            # out(m x f) += cols(m x kk) @ W(kk x f)
            _gemm(c'N', c'N', f, m, kk, 1, &weight[0, 0, 0, 0], f,
                  &cols[0, 0], kk, 1, op, f)
            if relu:
                for r in range(m * f):
                    if op[r] < 0:
                        op[r] = 0
    return out


def conv2d_backward(x, weight, dout):
    """Gradients ``(dx, dweight, dbias)`` of :func:`conv2d_forward`."""
    x = np.ascontiguousarray(x)
    weight = np.ascontiguousarray(weight, dtype=x.dtype)
    dout = np.ascontiguousarray(dout, dtype=x.dtype)
    if x.dtype == np.float32:
        return _conv_bwd[float](x, weight, dout)
    if x.dtype == np.float64:
        return _conv_bwd[double](x, weight, dout)
    raise TypeError(f"unsupported dtype {x.dtype}")


cdef _conv_bwd(real[:, :, :, ::1] x, real[:, :, :, ::1] weight, real[:, :, :, ::1] dout):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef int k = weight.shape[0], f = weight.shape[3]
    cdef int kk = k * k * c, m = h * w
    cdef Py_ssize_t p = k // 2
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros((n, h, w, c), dtype=dtype)
    dw_arr = np.zeros((k, k, c, f), dtype=dtype)
    db_arr = np.zeros(f, dtype=dtype)
    buf = np.empty((m, kk), dtype=dtype)
    dbuf = np.empty((m, kk), dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef real[:, :, :, ::1] dw = dw_arr
    cdef real[::1] db = db_arr
    cdef real[:, ::1] cols = buf
    cdef real[:, ::1] dcols = dbuf
    cdef Py_ssize_t img, r, j, y, xx, ky, kx, yy, xs, ch
    cdef real* dp
    cdef real* src
    cdef real* dst
    with nogil:
        for img in range(n):
            dp = &dout[img, 0, 0, 0]
            for r in range(m):
                for j in range(f):
                    db[j] += dp[r * f + j]
            _fill_cols(x, img, k, &cols[0, 0])
            # dW(kk x f) += cols^T @ dout_img
            _gemm(c'N', c'T', f, kk, m, 1, dp, f, &cols[0, 0], kk, 1,
                  &dw[0, 0, 0, 0], f)
            # dcols(m x kk) = dout_img @ W^T
            _gemm(c'T', c'N', kk, m, f, 1, &weight[0, 0, 0, 0], f, dp, f, 0,
                  &dcols[0, 0], kk)
            # Reverse row order gives each input pixel its (ky, kx)-ascending
            # accumulation order, matching the numpy col2im.
            for r in range(m - 1, -1, -1):
                y = r // w
                xx = r % w
                for ky in range(k):
                    yy = y + ky - p
                    if yy < 0 or yy >= h:
                        continue
                    for kx in range(k):
                        xs = xx + kx - p
                        if xs < 0 or xs >= w:
                            continue
                        dst = &dx[img, yy, xs, 0]
                        src = &dcols[r, (ky * k + kx) * c]
                        for ch in range(c):
                            dst[ch] += src[ch]
    return dx_arr, dw_arr, db_arr


def batchnorm_train_forward(x, gamma, beta, double eps):
    """Batch statistics over all but the last axis.

    Returns ``(out, xhat, mean, var)``; statistics accumulate in double.
    """
    x = np.ascontiguousarray(x)
    shape = x.shape
    x2 = x.reshape(-1, shape[len(shape) - 1])
    gamma = np.ascontiguousarray(gamma, dtype=x.dtype)
    beta = np.ascontiguousarray(beta, dtype=x.dtype)
    if x.dtype == np.float32:
        out, xhat, mean, var = _bn_fwd[float](x2, gamma, beta, eps)
    elif x.dtype == np.float64:
        out, xhat, mean, var = _bn_fwd[double](x2, gamma, beta, eps)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return out.reshape(shape), xhat.reshape(shape), mean, var


cdef _bn_fwd(real[:, ::1] x, real[::1] gamma, real[::1] beta, double eps):
    cdef Py_ssize_t m = x.shape[0], c = x.shape[1], i, j
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((m, c), dtype=dtype)
    xhat_arr = np.empty((m, c), dtype=dtype)
    mean_arr = np.zeros(c, dtype=np.float64)
    var_arr = np.zeros(c, dtype=np.float64)
    inv_arr = np.empty(c, dtype=np.float64)
    cdef real[:, ::1] out = out_arr
    cdef real[:, ::1] xhat = xhat_arr
    cdef double[::1] mean = mean_arr
    cdef double[::1] var = var_arr
    cdef double[::1] inv = inv_arr
    cdef double d
    with nogil:
        for i in range(m):
            for j in range(c):
                mean[j] += x[i, j]
        for j in range(c):
            mean[j] /= m
        for i in range(m):
            for j in range(c):
                d = x[i, j] - mean[j]
                var[j] += d * d
        for j in range(c):
            var[j] /= m
            inv[j] = 1.0 / sqrt(var[j] + eps)
        for i in range(m):
            for j in range(c):
                d = (x[i, j] - mean[j]) * inv[j]
                xhat[i, j] = <real>d
                out[i, j] = <real>(d * gamma[j] + beta[j])
    return out_arr, xhat_arr, mean_arr, var_arr


def batchnorm_backward(dout, xhat, gamma, inv):
    """Returns ``(dx, dgamma, dbeta)`` given the cached ``xhat`` and 1/std."""
    dout = np.ascontiguousarray(dout)
    shape = dout.shape
    d2 = dout.reshape(-1, shape[len(shape) - 1])
    xh = np.ascontiguousarray(xhat, dtype=dout.dtype).reshape(d2.shape[0], d2.shape[1])
    gamma = np.ascontiguousarray(gamma, dtype=np.float64)
    inv = np.ascontiguousarray(inv, dtype=np.float64)
    if dout.dtype == np.float32:
        dx, dg, db = _bn_bwd[float](d2, xh, gamma, inv)
    elif dout.dtype == np.float64:
        dx, dg, db = _bn_bwd[double](d2, xh, gamma, inv)
    else:
        raise TypeError(f"unsupported dtype {dout.dtype}")
    return dx.reshape(shape), dg.astype(dout.dtype), db.astype(dout.dtype)


cdef _bn_bwd(real[:, ::1] dout, real[:, ::1] xhat, double[::1] gamma, double[::1] inv):
    cdef Py_ssize_t m = dout.shape[0], c = dout.shape[1], i, j
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.empty((m, c), dtype=dtype)
    dg_arr = np.zeros(c, dtype=np.float64)
    db_arr = np.zeros(c, dtype=np.float64)
    scale_arr = np.empty(c, dtype=np.float64)
    cdef real[:, ::1] dx = dx_arr
    cdef double[::1] dg = dg_arr
    cdef double[::1] db = db_arr
    cdef double[::1] scale = scale_arr
    with nogil:
        for i in range(m):
            for j in range(c):
                db[j] += dout[i, j]
                dg[j] += dout[i, j] * xhat[i, j]
        for j in range(c):
            scale[j] = gamma[j] * inv[j]
        for i in range(m):
            for j in range(c):
                dx[i, j] = <real>(scale[j] * (dout[i, j] - (db[j] + xhat[i, j] * dg[j]) / m))
    return dx_arr, dg_arr, db_arr


def col2im(cols, shape, int k):
    cols = np.ascontiguousarray(cols)
    n, hp, wp, c = shape
    if cols.dtype == np.float32:
        return _col2im[float](cols, n, hp, wp, c, k)
    if cols.dtype == np.float64:
        return _col2im[double](cols, n, hp, wp, c, k)
    raise TypeError(f"unsupported dtype {cols.dtype}")


cdef _col2im(real[:, ::1] cols, Py_ssize_t n, Py_ssize_t hp, Py_ssize_t wp,
             Py_ssize_t c, int k):
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, hp, wp, c), dtype=dtype)
    cdef real[:, :, :, ::1] xp = out
    cdef Py_ssize_t out_h = hp - k + 1, out_w = wp - k + 1
    cdef Py_ssize_t b, y, x, ky, kx, ch, r, base
    cdef real* dst
    cdef real* src
    # Accumulation order (ky, kx) per output pixel; identical to the numpy loop
    # order so both backends round the same way.
    with nogil:
        for ky in range(k):
            for kx in range(k):
                base = (ky * k + kx) * c
                r = 0
                for b in range(n):
                    for y in range(out_h):
                        for x in range(out_w):
                            dst = &xp[b, y + ky, x + kx, 0]
                            src = &cols[r, base]
                            for ch in range(c):
                                dst[ch] += src[ch]
                            r += 1
    return out


def maxpool2_forward(x):
    x = np.ascontiguousarray(x)
    if x.dtype == np.float32:
        return _pool_fwd[float](x)
    if x.dtype == np.float64:
        return _pool_fwd[double](x)
    raise TypeError(f"unsupported dtype {x.dtype}")


cdef _pool_fwd(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], h2 = x.shape[1] // 2, w2 = x.shape[2] // 2
    cdef Py_ssize_t c = x.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, h2, w2, c), dtype=dtype)
    arg = np.empty((n, h2, w2, c), dtype=np.int8)
    cdef real[:, :, :, ::1] o = out
    cdef signed char[:, :, :, ::1] a = arg
    cdef Py_ssize_t b, i, j, ch
    cdef real best, v
    cdef signed char code
    with nogil:
        for b in range(n):
            for i in range(h2):
                for j in range(w2):
                    for ch in range(c):
                        best = x[b, 2 * i, 2 * j, ch]
                        code = 0
                        v = x[b, 2 * i, 2 * j + 1, ch]
                        if v > best:
                            best = v
                            code = 1
                        v = x[b, 2 * i + 1, 2 * j, ch]
                        if v > best:
                            best = v
                            code = 2
                        v = x[b, 2 * i + 1, 2 * j + 1, ch]
                        if v > best:
                            best = v
                            code = 3
                        o[b, i, j, ch] = best
                        a[b, i, j, ch] = code
    return out, arg


def maxpool2_backward(dout, arg, in_shape):
    dout = np.ascontiguousarray(dout)
    arg = np.ascontiguousarray(arg, dtype=np.int8)
    if dout.dtype == np.float32:
        return _pool_bwd[float](dout, arg, tuple(in_shape))
    if dout.dtype == np.float64:
        return _pool_bwd[double](dout, arg, tuple(in_shape))
    raise TypeError(f"unsupported dtype {dout.dtype}")


cdef _pool_bwd(real[:, :, :, ::1] dout, signed char[:, :, :, ::1] arg, tuple in_shape):
    dtype = np.float32 if real is float else np.float64
    dx = np.zeros(in_shape, dtype=dtype)
    cdef real[:, :, :, ::1] d = dx
    cdef Py_ssize_t n = dout.shape[0], h2 = dout.shape[1], w2 = dout.shape[2]
    cdef Py_ssize_t c = dout.shape[3]
    cdef Py_ssize_t b, i, j, ch
    cdef signed char code
    with nogil:
        for b in range(n):
            for i in range(h2):
                for j in range(w2):
                    for ch in range(c):
                        code = arg[b, i, j, ch]
                        d[b, 2 * i + (code >> 1), 2 * j + (code & 1), ch] = dout[b, i, j, ch]
    return dx


def binary_erode(mask, offsets, border_value=False):
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    offs = np.ascontiguousarray(np.asarray(offsets, dtype=np.intp).reshape(-1, 2))
    return _erode(m, offs, 1 if border_value else 0).view(bool)


cdef _erode(unsigned char[:, ::1] m, Py_ssize_t[:, ::1] offs, unsigned char border):
    # One sweep per offset with a contiguous inner loop, so the AND vectorizes.
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1], no = offs.shape[0]
    out = np.ones((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] o = out
    cdef Py_ssize_t r, c, t, dr, dc, c0, c1
    with nogil:
        for t in range(no):
            dr = offs[t, 0]
            dc = offs[t, 1]
            c0 = max(0, -dc)
            c1 = min(w, w - dc)
            for r in range(h):
                if r + dr < 0 or r + dr >= h:
                    if not border:
                        memset(&o[r, 0], 0, w)
                    continue
                if not border:
                    for c in range(0, min(c0, w)):
                        o[r, c] = 0
                    for c in range(max(c1, 0), w):
                        o[r, c] = 0
                for c in range(c0, c1):
                    o[r, c] &= m[r + dr, c + dc]
    return out


def binary_dilate(mask, offsets):
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    offs = np.ascontiguousarray(np.asarray(offsets, dtype=np.intp).reshape(-1, 2))
    return _dilate(m, offs).view(bool)


cdef _dilate(unsigned char[:, ::1] m, Py_ssize_t[:, ::1] offs):
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1], no = offs.shape[0]
    out = np.zeros((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] o = out
    cdef Py_ssize_t r, c, t, dr, dc, c0, c1
    with nogil:
        for t in range(no):
            dr = -offs[t, 0]
            dc = -offs[t, 1]
            c0 = max(0, -dc)
            c1 = min(w, w - dc)
            for r in range(max(0, -dr), min(h, h - dr)):
                for c in range(c0, c1):
                    o[r, c] |= m[r + dr, c + dc]
    return out
