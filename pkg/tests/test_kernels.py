"""Backend agreement and kernel-level contracts."""

import numpy as np
import pytest

from more_lab import _kernels as K

BACKENDS = K.available_backends()
needs_c = pytest.mark.skipif("c" not in BACKENDS,
                             reason="compiled backend not built")


def _pair():
    return K.get_backend("python"), K.get_backend("c")


@needs_c
def test_backends_agree_on_softmax(rng):
    py, ck = _pair()
    x = rng.normal(scale=5.0, size=(17, 23))
    gy = rng.normal(size=(17, 23))
    y1, y2 = py.softmax_fwd(x), ck.softmax_fwd(x)
    assert np.allclose(y1, y2, atol=1e-14)
    assert np.allclose(py.softmax_bwd(y1, gy), ck.softmax_bwd(y2, gy), atol=1e-14)


@needs_c
def test_backends_agree_on_layernorm(rng):
    py, ck = _pair()
    x = rng.normal(size=(9, 32))
    gamma, beta = rng.normal(size=32), rng.normal(size=32)
    gy = rng.normal(size=(9, 32))
    y1, xh1, inv1 = py.layernorm_fwd(x, gamma, beta, 1e-5)
    y2, xh2, inv2 = ck.layernorm_fwd(x, gamma, beta, 1e-5)
    assert np.allclose(y1, y2, atol=1e-13)
    assert np.allclose(inv1, inv2, atol=1e-13)
    g1 = py.layernorm_bwd(gy, xh1, inv1, gamma)
    g2 = ck.layernorm_bwd(gy, xh2, inv2, gamma)
    for a, b in zip(g1, g2):
        assert np.allclose(a, b, atol=1e-12)


@needs_c
def test_backends_agree_on_activations(rng):
    py, ck = _pair()
    x = rng.normal(scale=3.0, size=(5, 7))
    gy = rng.normal(size=(5, 7))
    for fwd, bwd in (("gelu_fwd", "gelu_bwd"), ("relu_fwd", "relu_bwd")):
        assert np.allclose(getattr(py, fwd)(x), getattr(ck, fwd)(x), atol=1e-14)
        assert np.allclose(getattr(py, bwd)(x, gy), getattr(ck, bwd)(x, gy),
                           atol=1e-14)


@needs_c
def test_backends_agree_on_cross_entropy(rng):
    py, ck = _pair()
    z = rng.normal(scale=4.0, size=(6, 11))
    t = rng.integers(0, 11, size=6)
    l1, p1 = py.softmax_xent_fwd(z, t)
    l2, p2 = ck.softmax_xent_fwd(z, t)
    assert abs(l1 - l2) < 1e-13
    assert np.allclose(p1, p2, atol=1e-14)


@needs_c
def test_backends_agree_on_adamw(rng):
    py, ck = _pair()
    p1 = rng.normal(size=64)
    p2 = p1.copy()
    g = rng.normal(size=64)
    m1, v1 = np.zeros(64), np.zeros(64)
    m2, v2 = np.zeros(64), np.zeros(64)
    for t in range(1, 6):
        py.adamw_update(p1, g, m1, v1, t, 1e-2, 0.9, 0.999, 1e-8, 0.01)
        ck.adamw_update(p2, g, m2, v2, t, 1e-2, 0.9, 0.999, 1e-8, 0.01)
    assert np.allclose(p1, p2, atol=1e-14)
    assert np.allclose(m1, m2, atol=1e-14)
    assert np.allclose(v1, v2, atol=1e-14)


@needs_c
def test_backends_agree_on_resampling(rng):
    py, ck = _pair()
    src = rng.random((3, 37, 21))
    for oh, ow in ((16, 16), (64, 48), (37, 21)):
        assert np.allclose(py.resize_bilinear(src, oh, ow),
                           ck.resize_bilinear(src, oh, ow), atol=1e-13)
        assert np.array_equal(py.resize_nearest(src, oh, ow),
                              ck.resize_nearest(src, oh, ow))


@pytest.mark.parametrize("backend", BACKENDS)
def test_bilinear_matches_loop_oracle(backend, rng):
    impl = K.get_backend(backend)
    src = rng.random((2, 8, 6))
    oh, ow = 5, 9
    want = np.empty((2, oh, ow))
    for oy in range(oh):
        sy = (oy + 0.5) * 8 / oh - 0.5
        y0 = min(max(int(np.floor(sy)), 0), 7)
        fy = min(max(sy - y0, 0.0), 1.0)
        y1 = min(y0 + 1, 7)
        for ox in range(ow):
            sx = (ox + 0.5) * 6 / ow - 0.5
            x0 = min(max(int(np.floor(sx)), 0), 5)
            fx = min(max(sx - x0, 0.0), 1.0)
            x1 = min(x0 + 1, 5)
            for c in range(2):
                top = src[c, y0, x0] * (1 - fx) + src[c, y0, x1] * fx
                bot = src[c, y1, x0] * (1 - fx) + src[c, y1, x1] * fx
                want[c, oy, ox] = top * (1 - fy) + bot * fy
    assert np.allclose(impl.resize_bilinear(src, oh, ow), want, atol=1e-12)


def test_backend_switch_is_reversible():
    before = K.BACKEND
    try:
        assert K.use("python") == "python"
        assert K.BACKEND == "python"
    finally:
        K.use(before)
    assert K.BACKEND == before
