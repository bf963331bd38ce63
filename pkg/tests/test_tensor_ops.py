"""Forward-value contracts of the tensor ops against independent oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from more_lab import tensor as T
from more_lab.errors import EmptyPoolError, ShapeError
from more_lab.tensor import Tensor


def t(values, **kw):
    return Tensor(np.asarray(values, dtype=float), **kw)


class TestMatmul:
    def test_identity(self):
        eye = t(np.eye(2))
        b = t([[3.0, 4.0], [5.0, 6.0]])
        assert np.allclose(T.matmul(eye, b).array, b.array)

    def test_shape_contract(self):
        out = T.matmul(t(np.ones((2, 3))), t(np.ones((3, 4))))
        assert out.shape == [2, 4]

    def test_manual_arithmetic(self):
        # hand oracle: [[1*5+2*7, 1*6+2*8], [3*5+4*7, 3*6+4*8]]
        out = T.matmul(t([[1.0, 2.0], [3.0, 4.0]]), t([[5.0, 6.0], [7.0, 8.0]]))
        assert out.array.tolist() == [[19.0, 22.0], [43.0, 50.0]]

    def test_loop_oracle(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 5))
        want = [[sum(a[i, k] * b[k, j] for k in range(4)) for j in range(5)]
                for i in range(3)]
        assert np.allclose(T.matmul(t(a), t(b)).array, want, atol=1e-12)

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\[2, 3\].*\[2, 4\]"):
            T.matmul(t(np.ones((2, 3))), t(np.ones((2, 4))))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_associativity_random_chains(self, seed):
        r = np.random.default_rng(seed)
        a, b, c = (t(r.normal(size=(3, 3))) for _ in range(3))
        left = T.matmul(T.matmul(a, b), c).array
        right = T.matmul(a, T.matmul(b, c)).array
        assert np.allclose(left, right, atol=1e-9)


class TestSoftmax:
    def test_symmetry(self):
        assert np.allclose(T.softmax(t([0.0, 0.0])).data, [0.5, 0.5])

    def test_stability_limit(self):
        out = T.softmax(t([1000.0, 0.0])).data
        assert abs(out[0] - 1.0) < 1e-12 and abs(out[1]) < 1e-12

    def test_direct_evaluation(self):
        # oracle: exp(x)/sum(exp(x)) evaluated directly
        want = [math.exp(v) for v in (1.0, 2.0, 3.0)]
        want = [v / sum(want) for v in want]
        assert np.allclose(want, [0.09003057, 0.24472847, 0.66524096], atol=1e-7)
        assert np.allclose(T.softmax(t([1.0, 2.0, 3.0])).data, want, atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 7), st.integers(1, 9))
    def test_rows_sum_to_one_in_range(self, seed, rows, cols):
        x = np.random.default_rng(seed).normal(scale=20.0, size=(rows, cols))
        y = T.softmax(t(x)).array
        assert np.all(y >= 0.0) and np.all(y <= 1.0)
        assert np.allclose(y.sum(axis=1), 1.0, atol=1e-12)


class TestLayerNorm:
    def test_constant_row_maps_to_beta(self):
        out = T.layer_norm(t([[5.0, 5.0, 5.0]]), t(np.ones(3)), t(np.zeros(3)))
        assert np.allclose(out.data, 0.0, atol=1e-6)

    def test_direct_evaluation_small_eps(self):
        out = T.layer_norm(t([[1.0, 3.0]]), t(np.ones(2)), t(np.zeros(2)),
                           eps=1e-12)
        assert np.allclose(out.data, [-1.0, 1.0], atol=1e-6)

    def test_gamma_zero_collapses_to_beta(self, rng):
        x = rng.normal(size=(4, 6))
        beta = rng.normal(size=6)
        out = T.layer_norm(t(x), t(np.zeros(6)), t(beta))
        assert np.allclose(out.array, np.tile(beta, (4, 1)), atol=1e-12)

    def test_loop_oracle(self, rng):
        x = rng.normal(size=(3, 5))
        gamma, beta = rng.normal(size=5), rng.normal(size=5)
        eps = 1e-5
        want = np.empty_like(x)
        for i in range(3):
            mu = sum(x[i]) / 5
            var = sum((v - mu) ** 2 for v in x[i]) / 5
            for j in range(5):
                want[i, j] = (x[i, j] - mu) / math.sqrt(var + eps) * gamma[j] + beta[j]
        out = T.layer_norm(t(x), t(gamma), t(beta), eps=eps)
        assert np.allclose(out.array, want, atol=1e-12)


class TestAvgPool:
    def test_constant_rows(self):
        out = T.avg_pool(t(np.full((4, 3), 2.5)))
        assert out.shape == [3]
        assert np.allclose(out.data, 2.5)

    def test_symmetry(self):
        assert np.allclose(T.avg_pool(t([[0.0, 2.0], [2.0, 0.0]])).data, [1.0, 1.0])

    def test_loop_oracle(self, rng):
        x = rng.normal(size=(6, 4))
        want = [sum(x[i, j] for i in range(6)) / 6 for j in range(4)]
        assert np.allclose(T.avg_pool(t(x)).data, want, atol=1e-12)

    def test_empty_pool(self):
        with pytest.raises(EmptyPoolError):
            T.avg_pool(Tensor(np.zeros(0), [0, 3]))


class TestCrossEntropy:
    def test_uniform_logits(self):
        out = T.cross_entropy(t(np.zeros((1, 22))), [5])
        assert abs(out.item() - math.log(22)) < 1e-12
        assert abs(math.log(22) - 3.0910424533583156) < 1e-12

    def test_confident_case(self):
        logits = np.zeros((1, 4))
        logits[0, 2] = 50.0
        assert T.cross_entropy(t(logits), [2]).item() < 1e-12

    def test_direct_evaluation(self):
        # oracle: -log softmax([1,2,3])[2]
        probs = [math.exp(v) for v in (1.0, 2.0, 3.0)]
        want = -math.log(probs[2] / sum(probs))
        assert abs(want - 0.40760596444438) < 1e-10
        out = T.cross_entropy(t([[1.0, 2.0, 3.0]]), [2])
        assert abs(out.item() - want) < 1e-12

    def test_batch_mean_loop_oracle(self, rng):
        z = rng.normal(size=(5, 7))
        tgt = rng.integers(0, 7, size=5).tolist()
        per = []
        for i in range(5):
            e = [math.exp(v) for v in z[i]]
            per.append(-math.log(e[tgt[i]] / sum(e)))
        assert abs(T.cross_entropy(t(z), tgt).item() - sum(per) / 5) < 1e-12

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            T.cross_entropy(t(np.zeros((1, 3))), [3])


class TestElementwise:
    def test_relu_values(self):
        assert T.relu(t([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]

    def test_gelu_against_erf_formula(self, rng):
        x = rng.normal(size=11)
        want = [0.5 * v * (1 + math.erf(v / math.sqrt(2))) for v in x]
        assert np.allclose(T.gelu(t(x)).data, want, atol=1e-12)

    def test_add_scalar_broadcast_only(self, rng):
        a = t(rng.normal(size=(2, 3)))
        assert np.allclose(T.add(a, t([1.5])).array, a.array + 1.5)
        with pytest.raises(ShapeError):
            T.add(a, t(np.ones(3)))


class TestStructuralOps:
    def test_concat_slice_roundtrip(self, rng):
        a, b = t(rng.normal(size=(2, 4))), t(rng.normal(size=(3, 4)))
        cat = T.concat([a, b], axis=0)
        assert np.allclose(T.slice_rows(cat, 2, 5).array, b.array)

    def test_gather_rows(self, rng):
        table = t(rng.normal(size=(6, 3)))
        out = T.gather_rows(table, [5, 0, 5])
        assert np.allclose(out.array, table.array[[5, 0, 5]])

    def test_transpose(self, rng):
        a = t(rng.normal(size=(2, 5)))
        assert np.allclose(T.transpose(a).array, a.array.T)

    def test_reshape_preserves_order(self):
        a = t([[1.0, 2.0], [3.0, 4.0]])
        assert T.reshape(a, [4]).data.tolist() == [1.0, 2.0, 3.0, 4.0]


class TestFiniteness:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_forward_values_stay_finite(self, seed):
        r = np.random.default_rng(seed)
        x = t(r.normal(scale=100.0, size=(3, 4)))
        for out in (
            T.softmax(x),
            T.layer_norm(x, t(np.ones(4)), t(np.zeros(4))),
            T.gelu(x),
            T.relu(x),
            T.cross_entropy(x, r.integers(0, 4, size=3).tolist()),
        ):
            assert np.all(np.isfinite(out.data))


class TestMhaCore:
    def test_rows_sum_to_one(self, rng):
        q = t(rng.normal(size=(3, 8)))
        k = t(rng.normal(size=(5, 8)))
        v = t(rng.normal(size=(5, 8)))
        _, w = T.mha_core(q, k, v, heads=2, return_weights=True)
        assert w.shape == (2, 3, 5)
        assert np.allclose(w.sum(axis=2), 1.0, atol=1e-12)

    def test_masked_keys_get_zero_weight(self, rng):
        q = t(rng.normal(size=(2, 4)))
        k = t(rng.normal(size=(4, 4)))
        v = t(rng.normal(size=(4, 4)))
        mask = np.array([True, True, False, True])
        _, w = T.mha_core(q, k, v, heads=2, key_mask=mask, return_weights=True)
        assert np.all(w[:, :, 2] == 0.0)

    def test_single_head_matches_composed_oracle(self, rng):
        d = 6
        q = rng.normal(size=(3, d))
        k = rng.normal(size=(4, d))
        v = rng.normal(size=(4, d))
        scores = q @ k.T / math.sqrt(d)
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        attn = e / e.sum(axis=1, keepdims=True)
        want = attn @ v
        out = T.mha_core(t(q), t(k), t(v), heads=1)
        assert np.allclose(out.array, want, atol=1e-12)
