# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the _pykernels functions.

Same names, same semantics, same sampling conventions; single-pass C
loops instead of vectorized NumPy passes. See _pykernels for reference
implementations.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erf, exp, floor, log, sqrt

cnp.import_array()

cdef double INV_SQRT2 = 0.7071067811865476
cdef double INV_SQRT_2PI = 0.3989422804014327


def softmax_fwd(x):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t r = xv.shape[0], c = xv.shape[1], i, j
    out = np.empty((r, c))
    cdef double[:, ::1] y = out
    cdef double m, s
    for i in range(r):
        m = xv[i, 0]
        for j in range(1, c):
            if xv[i, j] > m:
                m = xv[i, j]
        s = 0.0
        for j in range(c):
            y[i, j] = exp(xv[i, j] - m)
            s += y[i, j]
        for j in range(c):
            y[i, j] /= s
    return out


def softmax_bwd(y, gy):
    cdef double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[:, ::1] gv = np.ascontiguousarray(gy, dtype=np.float64)
    cdef Py_ssize_t r = yv.shape[0], c = yv.shape[1], i, j
    out = np.empty((r, c))
    cdef double[:, ::1] gx = out
    cdef double dot
    for i in range(r):
        dot = 0.0
        for j in range(c):
            dot += yv[i, j] * gv[i, j]
        for j in range(c):
            gx[i, j] = yv[i, j] * (gv[i, j] - dot)
    return out


def layernorm_fwd(x, gamma, beta, double eps):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] gv = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t r = xv.shape[0], c = xv.shape[1], i, j
    y_arr = np.empty((r, c))
    xhat_arr = np.empty((r, c))
    inv_arr = np.empty(r)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] inv = inv_arr
    cdef double mu, var, d, s
    for i in range(r):
        mu = 0.0
        for j in range(c):
            mu += xv[i, j]
        mu /= c
        var = 0.0
        for j in range(c):
            d = xv[i, j] - mu
            var += d * d
        var /= c
        s = 1.0 / sqrt(var + eps)
        inv[i] = s
        for j in range(c):
            xhat[i, j] = (xv[i, j] - mu) * s
            y[i, j] = xhat[i, j] * gv[j] + bv[j]
    return y_arr, xhat_arr, inv_arr


def layernorm_bwd(gy, xhat, inv_std, gamma):
    cdef double[:, ::1] gv = np.ascontiguousarray(gy, dtype=np.float64)
    cdef double[:, ::1] xh = np.ascontiguousarray(xhat, dtype=np.float64)
    cdef double[::1] inv = np.ascontiguousarray(inv_std, dtype=np.float64)
    cdef double[::1] gm = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef Py_ssize_t r = gv.shape[0], c = gv.shape[1], i, j
    gx_arr = np.empty((r, c))
    ggamma_arr = np.zeros(c)
    gbeta_arr = np.zeros(c)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] ggamma = ggamma_arr
    cdef double[::1] gbeta = gbeta_arr
    cdef double h1, h2, dxh
    for i in range(r):
        h1 = 0.0
        h2 = 0.0
        for j in range(c):
            dxh = gv[i, j] * gm[j]
            h1 += dxh
            h2 += dxh * xh[i, j]
        h1 /= c
        h2 /= c
        for j in range(c):
            dxh = gv[i, j] * gm[j]
            gx[i, j] = inv[i] * (dxh - h1 - xh[i, j] * h2)
            ggamma[j] += gv[i, j] * xh[i, j]
            gbeta[j] += gv[i, j]
    return gx_arr, ggamma_arr, gbeta_arr


def gelu_fwd(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    flat = arr.reshape(-1)
    cdef double[::1] xv = flat
    out = np.empty(flat.shape[0])
    cdef double[::1] y = out
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        y[i] = 0.5 * xv[i] * (1.0 + erf(xv[i] * INV_SQRT2))
    return out.reshape(arr.shape)


def gelu_bwd(x, gy):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = np.ascontiguousarray(gy, dtype=np.float64).reshape(-1)
    cdef double[::1] xv = flat
    cdef double[::1] gv = gflat
    out = np.empty(flat.shape[0])
    cdef double[::1] gx = out
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double d
    for i in range(n):
        d = 0.5 * (1.0 + erf(xv[i] * INV_SQRT2)) \
            + xv[i] * exp(-0.5 * xv[i] * xv[i]) * INV_SQRT_2PI
        gx[i] = gv[i] * d
    return out.reshape(arr.shape)


def relu_fwd(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    flat = arr.reshape(-1)
    cdef double[::1] xv = flat
    out = np.empty(flat.shape[0])
    cdef double[::1] y = out
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        y[i] = xv[i] if xv[i] > 0.0 else 0.0
    return out.reshape(arr.shape)


def relu_bwd(x, gy):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = np.ascontiguousarray(gy, dtype=np.float64).reshape(-1)
    cdef double[::1] xv = flat
    cdef double[::1] gv = gflat
    out = np.empty(flat.shape[0])
    cdef double[::1] gx = out
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        gx[i] = gv[i] if xv[i] > 0.0 else 0.0
    return out.reshape(arr.shape)


def softmax_xent_fwd(logits, targets):
    cdef double[:, ::1] z = np.ascontiguousarray(logits, dtype=np.float64)
    cdef long[::1] t = np.ascontiguousarray(targets, dtype=np.int64)
    cdef Py_ssize_t b = z.shape[0], k = z.shape[1], i, j
    probs_arr = np.empty((b, k))
    cdef double[:, ::1] probs = probs_arr
    cdef double m, s, loss = 0.0
    for i in range(b):
        m = z[i, 0]
        for j in range(1, k):
            if z[i, j] > m:
                m = z[i, j]
        s = 0.0
        for j in range(k):
            probs[i, j] = exp(z[i, j] - m)
            s += probs[i, j]
        for j in range(k):
            probs[i, j] /= s
        loss += m + log(s) - z[i, t[i]]
    return loss / b, probs_arr


def adamw_update(p, g, m, v, long t, double lr, double beta1, double beta2,
                 double eps, double weight_decay):
    cdef double[::1] pv = p
    cdef double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[::1] mv = m
    cdef double[::1] vv = v
    cdef Py_ssize_t i, n = pv.shape[0]
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    for i in range(n):
        mv[i] = beta1 * mv[i] + (1.0 - beta1) * gv[i]
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * gv[i] * gv[i]
        pv[i] -= lr * weight_decay * pv[i]
        pv[i] -= lr * (mv[i] / bc1) / (sqrt(vv[i] / bc2) + eps)


def resize_bilinear(src, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef double[:, :, ::1] s = np.ascontiguousarray(src, dtype=np.float64)
    cdef Py_ssize_t c = s.shape[0], h = s.shape[1], w = s.shape[2]
    out = np.empty((c, out_h, out_w))
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t ch, oy, ox, y0, y1, x0, x1
    cdef double sy, sx, fy, fx, top, bot
    cdef double scale_y = h / <double>out_h
    cdef double scale_x = w / <double>out_w
    for oy in range(out_h):
        sy = (oy + 0.5) * scale_y - 0.5
        y0 = <Py_ssize_t>floor(sy)
        if y0 < 0:
            y0 = 0
        if y0 > h - 1:
            y0 = h - 1
        fy = sy - y0
        if fy < 0.0:
            fy = 0.0
        if fy > 1.0:
            fy = 1.0
        y1 = y0 + 1 if y0 + 1 < h else h - 1
        for ox in range(out_w):
            sx = (ox + 0.5) * scale_x - 0.5
            x0 = <Py_ssize_t>floor(sx)
            if x0 < 0:
                x0 = 0
            if x0 > w - 1:
                x0 = w - 1
            fx = sx - x0
            if fx < 0.0:
                fx = 0.0
            if fx > 1.0:
                fx = 1.0
            x1 = x0 + 1 if x0 + 1 < w else w - 1
            for ch in range(c):
                top = s[ch, y0, x0] * (1.0 - fx) + s[ch, y0, x1] * fx
                bot = s[ch, y1, x0] * (1.0 - fx) + s[ch, y1, x1] * fx
                o[ch, oy, ox] = top * (1.0 - fy) + bot * fy
    return out


def resize_nearest(src, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef double[:, :, ::1] s = np.ascontiguousarray(src, dtype=np.float64)
    cdef Py_ssize_t c = s.shape[0], h = s.shape[1], w = s.shape[2]
    out = np.empty((c, out_h, out_w))
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t ch, oy, ox, iy, ix
    cdef double scale_y = h / <double>out_h
    cdef double scale_x = w / <double>out_w
    for oy in range(out_h):
        iy = <Py_ssize_t>((oy + 0.5) * scale_y)
        if iy > h - 1:
            iy = h - 1
        for ox in range(out_w):
            ix = <Py_ssize_t>((ox + 0.5) * scale_x)
            if ix > w - 1:
                ix = w - 1
            for ch in range(c):
                o[ch, oy, ox] = s[ch, iy, ix]
    return out
