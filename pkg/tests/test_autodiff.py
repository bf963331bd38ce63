"""Gradient correctness: every registered op against central differences."""

import numpy as np
import pytest

from more_lab import tensor as T
from more_lab.errors import EvaluationError
from more_lab.tensor import Tape, Tensor, grad_check


def param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    """Collapse any op output to a scalar with fixed weights."""
    flat = T.reshape(out, [out.size])
    return T.cross_entropy(
        T.reshape(T.mul(flat, Tensor(w.reshape(-1))), [1, out.size]),
        [0],
    )


def test_square_at_three():
    x = Tensor([3.0], requires_grad=True)
    err = grad_check(lambda: T.mul(x, x), [x], h=1e-5)
    assert err < 1e-8
    x.zero_grad()
    with Tape() as tape:
        y = T.mul(x, x)
        tape.backward(y)
    assert abs(x.grad[0] - 6.0) < 1e-12


def test_linear_softmax_xent_layer():
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(4, 5)))
    w = param(rng, 5, 3)
    b = param(rng, 3)

    def f():
        return T.cross_entropy(T.linear(x, w, b), [0, 2, 1, 1])

    assert grad_check(f, [w, b], h=1e-5) < 1e-6


# each case: (make input arrays from rng, build the op from params)
OP_CASES = {
    "matmul": (
        lambda r: (r.normal(size=(3, 4)), r.normal(size=(4, 2))),
        lambda p: T.matmul(p[0], p[1]),
    ),
    "linear": (
        lambda r: (r.normal(size=(3, 4)), r.normal(size=(4, 2)), r.normal(size=2)),
        lambda p: T.linear(p[0], p[1], p[2]),
    ),
    "add": (
        lambda r: (r.normal(size=(3, 4)), r.normal(size=(3, 4))),
        lambda p: T.add(p[0], p[1]),
    ),
    "add_scalar": (
        lambda r: (r.normal(size=(3, 4)), r.normal(size=1)),
        lambda p: T.add(p[0], p[1]),
    ),
    "mul": (
        lambda r: (r.normal(size=(2, 5)), r.normal(size=(2, 5))),
        lambda p: T.mul(p[0], p[1]),
    ),
    "scale": (
        lambda r: (r.normal(size=(3, 3)),),
        lambda p: T.scale(p[0], -1.7),
    ),
    "transpose": (
        lambda r: (r.normal(size=(3, 4)),),
        lambda p: T.transpose(p[0]),
    ),
    "reshape": (
        lambda r: (r.normal(size=(3, 4)),),
        lambda p: T.reshape(p[0], [2, 6]),
    ),
    "softmax": (
        lambda r: (r.normal(size=(3, 5)),),
        lambda p: T.softmax(p[0]),
    ),
    "layer_norm": (
        lambda r: (r.normal(size=(3, 6)), 1.0 + 0.3 * r.normal(size=6),
                   r.normal(size=6)),
        lambda p: T.layer_norm(p[0], p[1], p[2]),
    ),
    "relu": (
        # keep inputs away from the kink at zero
        lambda r: (r.normal(size=(3, 4)) + 0.5 * np.sign(r.normal(size=(3, 4))),),
        lambda p: T.relu(p[0]),
    ),
    "gelu": (
        lambda r: (r.normal(size=(3, 4)),),
        lambda p: T.gelu(p[0]),
    ),
    "avg_pool": (
        lambda r: (r.normal(size=(6, 4)),),
        lambda p: T.reshape(T.avg_pool(p[0]), [1, 4]),
    ),
    "concat0": (
        lambda r: (r.normal(size=(2, 3)), r.normal(size=(4, 3))),
        lambda p: T.concat([p[0], p[1]], axis=0),
    ),
    "concat1": (
        lambda r: (r.normal(size=(2, 3)), r.normal(size=(2, 2))),
        lambda p: T.concat([p[0], p[1]], axis=1),
    ),
    "slice_rows": (
        lambda r: (r.normal(size=(5, 3)),),
        lambda p: T.slice_rows(p[0], 1, 3),
    ),
    "gather_rows": (
        lambda r: (r.normal(size=(4, 3)),),
        lambda p: T.gather_rows(p[0], [0, 2, 2, 1]),
    ),
    "mha": (
        lambda r: (r.normal(size=(3, 4)), r.normal(size=(5, 4)),
                   r.normal(size=(5, 4))),
        lambda p: T.mha_core(p[0], p[1], p[2], heads=2),
    ),
    "mha_masked": (
        lambda r: (r.normal(size=(3, 4)), r.normal(size=(5, 4)),
                   r.normal(size=(5, 4))),
        lambda p: T.mha_core(
            p[0], p[1], p[2], heads=2,
            key_mask=np.array([True, False, True, True, False])),
    ),
    "cross_entropy": (
        lambda r: (r.normal(size=(3, 4)),),
        lambda p: T.cross_entropy(p[0], [1, 0, 3]),
    ),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_match_central_differences(name):
    """100 seeded trials per op, relative error < 1e-5."""
    make_arrays, build = OP_CASES[name]
    worst = 0.0
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        params = [Tensor(a, requires_grad=True) for a in make_arrays(rng)]
        out_size = build(params).size
        w = np.random.default_rng(2000 + trial).normal(size=out_size)

        def f():
            out = build(params)
            if out.shape == []:
                return out
            return weighted_sum(out, w)

        worst = max(worst, grad_check(f, params, h=1e-5))
    assert worst < 1e-5, f"{name}: worst rel err {worst}"


def test_dropout_backward_uses_same_mask():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    with Tape() as tape:
        y = T.dropout(x, 0.5, np.random.default_rng(9))
        mask = y.array != 0.0
        loss = T.cross_entropy(T.reshape(y, [1, 16]), [0])
        tape.backward(loss)
    g = x.grad.reshape(4, 4)
    assert np.all(g[~mask] == 0.0)


def test_disjoint_subgraphs_leave_unrelated_gradients_zero():
    rng = np.random.default_rng(5)
    a = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    with Tape() as tape:
        loss_a = T.cross_entropy(T.reshape(T.mul(a, a), [1, 4]), [0])
        T.mul(b, b)  # recorded but disconnected from loss_a
        tape.backward(loss_a)
    assert a.grad is not None and np.any(a.grad != 0.0)
    assert b.grad is None


def test_grad_accumulates_across_shared_uses():
    x = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        y = T.add(T.mul(x, x), x)  # d/dx (x^2 + x) = 2x + 1
        tape.backward(y)
    assert abs(x.grad[0] - 5.0) < 1e-12


def test_grad_check_rejects_nonfinite():
    x = Tensor([1.0], requires_grad=True)

    def f():
        return T.mul(Tensor([np.nan]), x)

    with pytest.raises(EvaluationError):
        grad_check(f, [x])


def test_grad_check_rejects_bad_step():
    x = Tensor([1.0], requires_grad=True)
    with pytest.raises(ValueError):
        grad_check(lambda: T.mul(x, x), [x], h=1e-2)


def test_no_recording_without_tape():
    x = Tensor([1.0], requires_grad=True)
    y = T.mul(x, x)
    assert y.requires_grad
    assert x.grad is None
