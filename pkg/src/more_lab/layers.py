"""Shared transformer building blocks over a flat parameter store.

Parameters live in one ordered ``dict[str, Tensor]`` keyed by dotted
names; creation order defines checkpoint manifest order. The text-side
stack applies LayerNorm to the sublayer output before the residual add,
the visual-side stack applies it to the sublayer input; both variants
are provided here and the encoders pick theirs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class Runtime:
    """Per-forward context: dropout is active only while training."""

    train: bool = False
    dropout: float = 0.0
    rng: Optional[np.random.Generator] = None

    def drop(self, x: Tensor) -> Tensor:
        if not self.train or self.dropout == 0.0:
            return x
        return T.dropout(x, self.dropout, self.rng)


EVAL = Runtime()


def make_param(params: dict[str, Tensor], name: str, array) -> Tensor:
    if name in params:
        raise ValueError(f"duplicate parameter {name!r}")
    t = Tensor(array, requires_grad=True)
    params[name] = t
    return t


def make_linear(params, prefix: str, rng: np.random.Generator, din: int, dout: int):
    std = np.sqrt(2.0 / (din + dout))
    make_param(params, f"{prefix}.w", rng.normal(0.0, std, size=(din, dout)))
    make_param(params, f"{prefix}.b", np.zeros(dout))


def apply_linear(params, prefix: str, x: Tensor) -> Tensor:
    return T.linear(x, params[f"{prefix}.w"], params[f"{prefix}.b"])


def make_ln(params, prefix: str, d: int):
    make_param(params, f"{prefix}.gamma", np.ones(d))
    make_param(params, f"{prefix}.beta", np.zeros(d))


def apply_ln(params, prefix: str, x: Tensor, eps: float) -> Tensor:
    return T.layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"], eps)


def make_mha(params, prefix: str, rng, d: int):
    for name in ("q", "k", "v", "o"):
        make_linear(params, f"{prefix}.{name}", rng, d, d)


def apply_mha_self(
    params, prefix: str, x: Tensor, heads: int, key_mask=None, rt: Runtime = EVAL
) -> Tensor:
    q = apply_linear(params, f"{prefix}.q", x)
    k = apply_linear(params, f"{prefix}.k", x)
    v = apply_linear(params, f"{prefix}.v", x)
    a = T.mha_core(q, k, v, heads, key_mask=key_mask)
    return rt.drop(apply_linear(params, f"{prefix}.o", a))


def make_ffn(params, prefix: str, rng, d: int, hidden: int):
    make_linear(params, f"{prefix}.in", rng, d, hidden)
    make_linear(params, f"{prefix}.out", rng, hidden, d)


def apply_ffn(params, prefix: str, x: Tensor, rt: Runtime = EVAL) -> Tensor:
    h = T.gelu(apply_linear(params, f"{prefix}.in", x))
    return rt.drop(apply_linear(params, f"{prefix}.out", h))


def make_encoder_layer(params, prefix: str, rng, d: int, hidden: int):
    make_mha(params, f"{prefix}.attn", rng, d)
    make_ln(params, f"{prefix}.ln1", d)
    make_ffn(params, f"{prefix}.ffn", rng, d, hidden)
    make_ln(params, f"{prefix}.ln2", d)


def encoder_layer_postln(
    params, prefix: str, x: Tensor, heads: int, eps: float, key_mask=None,
    rt: Runtime = EVAL,
) -> Tensor:
    """Residual layer normalizing the sublayer output (text convention)."""
    a = apply_mha_self(params, f"{prefix}.attn", x, heads, key_mask, rt)
    x = T.add(apply_ln(params, f"{prefix}.ln1", a, eps), x)
    f = apply_ffn(params, f"{prefix}.ffn", x, rt)
    return T.add(apply_ln(params, f"{prefix}.ln2", f, eps), x)


def encoder_layer_preln(
    params, prefix: str, x: Tensor, heads: int, eps: float, key_mask=None,
    rt: Runtime = EVAL,
) -> Tensor:
    """Residual layer normalizing the sublayer input (visual convention)."""
    a = apply_mha_self(
        params, f"{prefix}.attn", apply_ln(params, f"{prefix}.ln1", x, eps),
        heads, key_mask, rt,
    )
    x = T.add(a, x)
    f = apply_ffn(params, f"{prefix}.ffn", apply_ln(params, f"{prefix}.ln2", x, eps), rt)
    return T.add(f, x)
