"""AdamW contracts: closed-form first steps, decay decoupling,
degenerate-beta reductions, non-finite rejection."""

import math

import numpy as np
import pytest

from more_lab.errors import NonFiniteGradientError
from more_lab.optim import AdamWConfig, AdamWState, adamw_step
from more_lab.tensor import Tensor


def one_param(value):
    return {"w": Tensor(np.asarray(value, dtype=float), requires_grad=True)}


class TestAdamW:
    def test_decay_only_scales_exactly(self):
        params = one_param([2.0, -3.0, 0.5])
        start = params["w"].data.copy()
        cfg = AdamWConfig(lr=0.1, weight_decay=0.01)
        adamw_step(params, {"w": np.zeros(3)}, AdamWState(), cfg)
        assert np.array_equal(params["w"].data, start * (1.0 - 0.001))

    def test_first_step_closed_form(self):
        # m1 = 0.1, v1 = 0.001; bias-corrected both become 1, so the
        # update is -lr / (1 + eps)
        params = one_param([0.0])
        cfg = AdamWConfig(lr=0.1, betas=(0.9, 0.999), eps=1e-8,
                          weight_decay=0.0)
        adamw_step(params, {"w": np.array([1.0])}, AdamWState(), cfg)
        assert abs(params["w"].data[0] - (-0.1)) < 1e-6

    def test_constant_gradient_update_approaches_lr(self):
        params = one_param([0.0])
        cfg = AdamWConfig(lr=0.05, weight_decay=0.0)
        state = AdamWState()
        prev = params["w"].data[0]
        for _ in range(500):
            prev = params["w"].data[0]
            adamw_step(params, {"w": np.array([2.0])}, state, cfg)
        assert abs(abs(params["w"].data[0] - prev) - 0.05) < 1e-4

    def test_multi_step_recurrence_loop_oracle(self):
        rng = np.random.default_rng(3)
        grads = [rng.normal(size=4) for _ in range(10)]
        params = one_param(rng.normal(size=4))
        want = params["w"].data.copy()
        cfg = AdamWConfig(lr=0.01, betas=(0.9, 0.999), eps=1e-8,
                          weight_decay=0.02)
        state = AdamWState()
        m = np.zeros(4)
        v = np.zeros(4)
        for t, g in enumerate(grads, start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            want -= 0.01 * 0.02 * want
            want -= 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            adamw_step(params, {"w": g}, state, cfg)
        assert np.allclose(params["w"].data, want, atol=1e-12)

    def test_beta2_zero_is_sign_scaled_sgd(self):
        # with wd = 0, beta1 = 0, beta2 = 0: update = -lr * g / (|g| + eps)
        params = one_param([1.0])
        cfg = AdamWConfig(lr=0.1, betas=(0.0, 0.0), eps=1e-8, weight_decay=0.0)
        state = AdamWState()
        for g in (3.0, -0.2, 7.5):
            before = params["w"].data[0]
            adamw_step(params, {"w": np.array([g])}, state, cfg)
            step = params["w"].data[0] - before
            assert abs(step - (-0.1 * math.copysign(1.0, g))) < 1e-6

    def test_nonfinite_gradient_rejected_with_name(self):
        params = one_param([1.0])
        state = AdamWState()
        with pytest.raises(NonFiniteGradientError, match="'w'"):
            adamw_step(params, {"w": np.array([np.nan])}, state,
                       AdamWConfig())
        assert state.t == 0  # nothing applied
        assert params["w"].data[0] == 1.0

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            AdamWConfig(betas=(1.0, 0.9))
        with pytest.raises(ValueError):
            AdamWConfig(lr=0.0)
