"""Dense float64 tensors with taped reverse-mode differentiation.

Storage is a flat row-major float64 buffer plus an explicit shape. The
only implicit broadcast any op performs is scalar-vs-tensor; the one
structured broadcast (a bias row added across rows) is its own op with
an explicit backward rule. Ops record one node each on the active
``Tape``; recording order is execution order, which is topological by
construction, so the backward pass is a single reverse sweep that
visits every node at most once.

All encoders in this package are compositions of the ops here, and
``grad_check`` is the finite-difference oracle used to verify them.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import _kernels as K
from .errors import EmptyPoolError, EvaluationError, ShapeError


def _prod(shape):
    n = 1
    for s in shape:
        n *= s
    return n


class Tensor:
    """An n-dimensional float64 array with optional gradient tracking."""

    __slots__ = ("shape", "data", "requires_grad", "grad")

    def __init__(self, data, shape=None, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if shape is None:
            shape = list(arr.shape)
        shape = [int(s) for s in shape]
        flat = np.ascontiguousarray(arr).reshape(-1)
        if _prod(shape) != flat.size:
            raise ShapeError(f"shape {shape} does not hold {flat.size} values")
        self.shape = shape
        self.data = flat
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, shape, requires_grad=False):
        return cls(np.zeros(_prod(shape)), list(shape), requires_grad)

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def array(self) -> np.ndarray:
        """Row-major view of the flat buffer in this tensor's shape."""
        return self.data.reshape(self.shape)

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data[0])

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros(self.size)
        self.grad += g.reshape(-1)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


_TAPE_STACK: list["Tape"] = []


def _active_tape() -> Optional["Tape"]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of operations for one backward pass.

    Confine a tape to a single training step on a single thread; nodes
    are appended in execution order and replayed once, reversed.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.nodes.append((out, tuple(inputs), backward))

    def backward(self, root: Tensor, seed: float = 1.0):
        """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf.

        Adjoints of tensors produced on this tape are kept only while
        needed; whatever remains after the sweep belongs to leaves.
        Nodes disconnected from ``root`` never receive an adjoint and
        are skipped, leaving unrelated gradients untouched.
        """
        adjoints: dict[int, np.ndarray] = {
            id(root): np.full(root.size, float(seed)).reshape(root.shape)
        }
        holders: dict[int, Tensor] = {id(root): root}
        produced = {id(out) for out, _, _ in self.nodes}
        for out, inputs, backward in reversed(self.nodes):
            g = adjoints.pop(id(out), None)
            holders.pop(id(out), None)
            if g is None:
                continue
            contribs = backward(g)
            for t, c in zip(inputs, contribs):
                if c is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + c
                else:
                    adjoints[key] = c
                    holders[key] = t
        for key, g in adjoints.items():
            t = holders[key]
            if t.requires_grad and key not in produced:
                t.accumulate_grad(np.asarray(g))


def _result(value: np.ndarray, shape, inputs: Sequence[Tensor], backward) -> Tensor:
    # internal fast path: ops guarantee a fresh contiguous float64 array
    out = object.__new__(Tensor)
    out.shape = list(shape)
    out.data = value.reshape(-1)
    out.requires_grad = req = any(t.requires_grad for t in inputs)
    out.grad = None
    if req:
        tape = _active_tape()
        if tape is not None:
            tape.record(out, inputs, backward)
    return out


def _rows(t: Tensor) -> np.ndarray:
    """View a tensor as 2-D rows over its last axis."""
    if len(t.shape) == 0:
        raise ShapeError("scalar tensor has no rows")
    last = t.shape[-1]
    return t.data.reshape(-1, last)


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with dA = g·Bᵀ, dB = Aᵀ·g."""
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul of shapes {a.shape} and {b.shape}")
    av, bv = a.array, b.array
    out = av @ bv

    def backward(g):
        return g @ bv.T, av.T @ g

    return _result(out, [a.shape[0], b.shape[1]], (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if len(a.shape) != 2:
        raise ShapeError(f"transpose of shape {a.shape}")
    out = a.array.T.copy()

    def backward(g):
        return (g.T,)

    return _result(out, [a.shape[1], a.shape[0]], (a,), backward)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x @ w plus an optional bias row broadcast across rows of x."""
    if len(x.shape) != 2 or len(w.shape) != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear of shapes {x.shape} and {w.shape}")
    if b is not None and b.shape != [w.shape[1]]:
        raise ShapeError(f"bias shape {b.shape} does not match output {w.shape[1]}")
    xv, wv = x.array, w.array
    out = xv @ wv
    if b is not None:
        out = out + b.data

    if b is None:

        def backward(g):
            return g @ wv.T, xv.T @ g

        return _result(out, [x.shape[0], w.shape[1]], (x, w), backward)

    def backward_b(g):
        return g @ wv.T, xv.T @ g, g.sum(axis=0)

    return _result(out, [x.shape[0], w.shape[1]], (x, w, b), backward_b)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; one operand may be a scalar tensor."""
    if a.shape == b.shape:
        def backward(g):
            return g, g

        return _result(a.array + b.array, a.shape, (a, b), backward)
    if b.size == 1:
        def backward(g):
            return g, np.array([g.sum()])

        return _result(a.array + b.data[0], a.shape, (a, b), backward)
    if a.size == 1:
        def backward(g):
            return np.array([g.sum()]), g

        return _result(a.data[0] + b.array, b.shape, (a, b), backward)
    raise ShapeError(f"add of shapes {a.shape} and {b.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; one operand may be a scalar tensor."""
    av, bv = a.array, b.array
    if a.shape == b.shape:
        def backward(g):
            return g * bv, g * av

        return _result(av * bv, a.shape, (a, b), backward)
    if b.size == 1:
        def backward(g):
            return g * bv.reshape(()), np.array([(g * av).sum()])

        return _result(av * b.data[0], a.shape, (a, b), backward)
    if a.size == 1:
        def backward(g):
            return np.array([(g * bv).sum()]), g * av.reshape(())

        return _result(a.data[0] * bv, b.shape, (a, b), backward)
    raise ShapeError(f"mul of shapes {a.shape} and {b.shape}")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (g * c,)

    return _result(a.array * c, a.shape, (a,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = [int(s) for s in shape]
    if _prod(shape) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    in_shape = list(x.shape)

    def backward(g):
        return (g.reshape(in_shape),)

    return _result(x.data.copy(), shape, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Row softmax over the last axis, max-subtracted for stability."""
    if not x.shape or x.shape[-1] < 1:
        raise ShapeError(f"softmax over last axis of shape {x.shape}")
    y2 = K.softmax_fwd(_rows(x))

    def backward(g):
        gx = K.softmax_bwd(y2, g.reshape(y2.shape))
        return (gx.reshape(x.shape),)

    return _result(y2, x.shape, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardization over the last axis, then affine."""
    d = x.shape[-1]
    if gamma.shape != [d] or beta.shape != [d]:
        raise ShapeError(f"layer_norm params for width {d}: {gamma.shape}, {beta.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    y2, xhat, inv_std = K.layernorm_fwd(_rows(x), gamma.data, beta.data, eps)

    def backward(g):
        gx, ggamma, gbeta = K.layernorm_bwd(g.reshape(y2.shape), xhat, inv_std, gamma.data)
        return gx.reshape(x.shape), ggamma, gbeta

    return _result(y2, x.shape, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    xv = x.array

    def backward(g):
        return (K.relu_bwd(xv, g),)

    return _result(K.relu_fwd(xv), x.shape, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    xv = x.array

    def backward(g):
        return (K.gelu_bwd(xv, g),)

    return _result(K.gelu_fwd(xv), x.shape, (x,), backward)


def avg_pool(x: Tensor) -> Tensor:
    """Mean over the first axis of an s×d tensor, yielding a d-vector."""
    if len(x.shape) != 2:
        raise ShapeError(f"avg_pool of shape {x.shape}")
    s, d = x.shape
    if s == 0:
        raise EmptyPoolError("avg_pool over zero rows")
    out = x.array.mean(axis=0)

    def backward(g):
        return (np.tile(g.reshape(1, d) / s, (s, 1)),)

    return _result(out, [d], (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate 2-D tensors along axis 0 or 1."""
    tensors = [t for t in tensors]
    if not tensors:
        raise ShapeError("concat of no tensors")
    if any(len(t.shape) != 2 for t in tensors) or axis not in (0, 1):
        raise ShapeError("concat expects 2-D tensors and axis 0 or 1")
    other = 1 - axis
    if len({t.shape[other] for t in tensors}) != 1:
        raise ShapeError(f"concat shapes disagree: {[t.shape for t in tensors]}")
    out = np.concatenate([t.array for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        if axis == 0:
            return tuple(g[offsets[i]:offsets[i + 1], :] for i in range(len(sizes)))
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(sizes)))

    return _result(out, list(out.shape), tuple(tensors), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if len(x.shape) != 2:
        raise ShapeError(f"slice_rows of shape {x.shape}")
    n, d = x.shape
    if not (0 <= start < stop <= n):
        raise IndexError(f"rows [{start}:{stop}] of {n}")
    out = x.array[start:stop].copy()

    def backward(g):
        gx = np.zeros((n, d))
        gx[start:stop] = g
        return (gx,)

    return _result(out, [stop - start, d], (x,), backward)


def gather_rows(table: Tensor, indices: Sequence[int]) -> Tensor:
    """Select rows by index; backward scatter-adds into the table."""
    if len(table.shape) != 2:
        raise ShapeError(f"gather_rows of shape {table.shape}")
    n, d = table.shape
    idx = np.asarray(list(indices), dtype=np.intp)
    if idx.size == 0:
        raise IndexError("gather_rows of no indices")
    if idx.min() < 0 or idx.max() >= n:
        raise IndexError(f"row index out of range for table with {n} rows")
    out = table.array[idx].copy()

    def backward(g):
        gt = np.zeros((n, d))
        np.add.at(gt, idx, g)
        return (gt,)

    return _result(out, [int(idx.size), d], (table,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted-scaling Bernoulli dropout; identity when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate {p} outside [0, 1)")
    if p == 0.0:
        return x
    mask = (rng.random(x.size) >= p).astype(np.float64).reshape(x.shape) / (1.0 - p)

    def backward(g):
        return (g * mask,)

    return _result(x.array * mask, x.shape, (x,), backward)


def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log softmax probability of the target classes."""
    if len(logits.shape) != 2:
        raise ShapeError(f"cross_entropy of shape {logits.shape}")
    bsz, k = logits.shape
    tgt = np.asarray(list(targets), dtype=np.int64)
    if tgt.shape != (bsz,):
        raise ShapeError(f"{bsz} logit rows but {tgt.size} targets")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= k):
        raise IndexError(f"target class out of range [0, {k})")
    loss, probs = K.softmax_xent_fwd(logits.array, tgt)

    def backward(g):
        gl = probs.copy()
        gl[np.arange(bsz), tgt] -= 1.0
        gl *= float(np.asarray(g).reshape(-1)[0]) / bsz
        return (gl,)

    return _result(np.array([loss]), [], (logits,), backward)


def mha_core(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    heads: int,
    key_mask: Optional[np.ndarray] = None,
    return_weights: bool = False,
):
    """Scaled dot-product attention over pre-projected q/k/v.

    q is n_q×d, k and v are n_k×d with d divisible by ``heads``; masked
    keys (key_mask False) are excluded from every query's softmax. One
    tape node covers the whole attention, with a hand-derived backward.
    When ``return_weights`` is set, also returns a detached
    (heads, n_q, n_k) array of attention weights.
    """
    nq, d = q.shape
    nk, dv = k.shape
    if dv != d or v.shape != [nk, d]:
        raise ShapeError(f"attention shapes q{q.shape} k{k.shape} v{v.shape}")
    if d % heads != 0:
        raise ShapeError(f"width {d} not divisible by {heads} heads")
    dk = d // heads
    inv = 1.0 / math.sqrt(dk)

    qh = q.array.reshape(nq, heads, dk).transpose(1, 0, 2)
    kh = k.array.reshape(nk, heads, dk).transpose(1, 0, 2)
    vh = v.array.reshape(nk, heads, dk).transpose(1, 0, 2)

    scores = (qh @ kh.transpose(0, 2, 1)) * inv
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape != (nk,):
            raise ShapeError(f"key mask of length {key_mask.shape} for {nk} keys")
        scores[:, :, ~key_mask] = -1e30
    attn = K.softmax_fwd(scores.reshape(heads * nq, nk)).reshape(heads, nq, nk)
    out = (attn @ vh).transpose(1, 0, 2).reshape(nq, d)

    def backward(g):
        gh = g.reshape(nq, heads, dk).transpose(1, 0, 2)
        dattn = gh @ vh.transpose(0, 2, 1)
        dvh = attn.transpose(0, 2, 1) @ gh
        dscores = K.softmax_bwd(
            attn.reshape(heads * nq, nk), dattn.reshape(heads * nq, nk)
        ).reshape(heads, nq, nk)
        dqh = (dscores @ kh) * inv
        dkh = (dscores.transpose(0, 2, 1) @ qh) * inv
        dq = dqh.transpose(1, 0, 2).reshape(nq, d)
        dk_ = dkh.transpose(1, 0, 2).reshape(nk, d)
        dv_ = dvh.transpose(1, 0, 2).reshape(nk, d)
        return dq, dk_, dv_

    result = _result(out, [nq, d], (q, k, v), backward)
    if return_weights:
        return result, attn.copy()
    return result


def zero_grads(params: Iterable[Tensor]):
    for p in params:
        p.zero_grad()


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    samples_per_param: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between taped gradients and central differences.

    ``f`` must rebuild its graph on every call and return a scalar
    tensor. The error for each checked element is
    |analytic - fd| / max(1, |analytic|); with ``samples_per_param``
    set, a seeded random subset of each parameter is probed instead of
    every element, which is how the full-model check stays inside its
    time budget.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step size {h} outside [1e-7, 1e-3]")
    params = list(params)
    zero_grads(params)
    with Tape() as tape:
        loss = f()
        if not np.isfinite(loss.item()):
            raise EvaluationError("function value is not finite")
        tape.backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros(p.size) for p in params]

    def value() -> float:
        out = f().item()
        if not math.isfinite(out):
            raise EvaluationError("function value is not finite")
        return out

    worst = 0.0
    for p, ga in zip(params, analytic):
        if samples_per_param is None or p.size <= samples_per_param:
            idxs = range(p.size)
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(p.size, size=samples_per_param, replace=False)
        for i in idxs:
            orig = p.data[i]
            p.data[i] = orig + h
            fp = value()
            p.data[i] = orig - h
            fm = value()
            p.data[i] = orig
            fd = (fp - fm) / (2.0 * h)
            rel = abs(ga[i] - fd) / max(1.0, abs(ga[i]))
            if rel > worst:
                worst = rel
    return worst
