"""Pure NumPy implementations of the numeric kernels.

This is the fallback backend; ``_ckernels`` is the compiled twin. Both
export the same names with identical semantics, and the resampling
kernels share the same half-pixel sampling convention, so the two
backends agree to floating-point noise on any input.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def softmax_fwd(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    m = x.max(axis=1, keepdims=True)
    y = np.exp(x - m)
    y /= y.sum(axis=1, keepdims=True)
    return y


def softmax_bwd(y, gy):
    dot = np.sum(y * gy, axis=1, keepdims=True)
    return y * (gy - dot)


def layernorm_fwd(x, gamma, beta, eps):
    x = np.ascontiguousarray(x, dtype=np.float64)
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * gamma + beta, xhat, inv_std[:, 0].copy()


def layernorm_bwd(gy, xhat, inv_std, gamma):
    dxhat = gy * gamma
    h1 = dxhat.mean(axis=1, keepdims=True)
    h2 = np.mean(dxhat * xhat, axis=1, keepdims=True)
    gx = inv_std[:, None] * (dxhat - h1 - xhat * h2)
    ggamma = np.sum(gy * xhat, axis=0)
    gbeta = gy.sum(axis=0)
    return gx, ggamma, gbeta


def gelu_fwd(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(x, gy):
    d = 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return gy * d


def relu_fwd(x):
    return np.maximum(x, 0.0)


def relu_bwd(x, gy):
    return np.where(x > 0.0, gy, 0.0)


def softmax_xent_fwd(logits, targets):
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    probs = e / s
    rows = np.arange(logits.shape[0])
    lse = m[:, 0] + np.log(s[:, 0])
    loss = float(np.mean(lse - logits[rows, targets]))
    return loss, probs


def adamw_update(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """One decoupled-weight-decay Adam step, in place on p, m, v."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    p -= lr * weight_decay * p
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def resize_bilinear(src, out_h, out_w):
    """Half-pixel-center bilinear resampling of a (C, H, W) raster."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    c, h, w = src.shape
    sy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    sx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(sy), 0, h - 1).astype(np.intp)
    x0 = np.clip(np.floor(sx), 0, w - 1).astype(np.intp)
    fy = np.clip(sy - y0, 0.0, 1.0)
    fx = np.clip(sx - x0, 0.0, 1.0)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    top = src[:, y0[:, None], x0] * (1 - fx) + src[:, y0[:, None], x1] * fx
    bot = src[:, y1[:, None], x0] * (1 - fx) + src[:, y1[:, None], x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def resize_nearest(src, out_h, out_w):
    """Half-pixel-center nearest-neighbor resampling of a (C, H, W) raster."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    _, h, w = src.shape
    iy = np.minimum(((np.arange(out_h) + 0.5) * (h / out_h)).astype(np.intp), h - 1)
    ix = np.minimum(((np.arange(out_w) + 0.5) * (w / out_w)).astype(np.intp), w - 1)
    return src[:, iy[:, None], ix].copy()
