"""AdamW with decoupled weight decay.

The decay term w -= lr * wd * w is applied separately from the
moment-based update, so a zero-gradient step still shrinks weights by
exactly lr * wd. Steps with non-finite gradients are rejected outright
with the offending parameter named.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import NonFiniteGradientError, ShapeError
from .tensor import Tensor


@dataclass
class AdamWConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if not (0.0 <= self.betas[0] < 1.0 and 0.0 <= self.betas[1] < 1.0):
            raise ValueError(f"betas {self.betas} outside [0, 1)")
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError("lr and eps must be positive")


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    config: AdamWConfig,
):
    """Apply one update in place; t is incremented once per call."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise NonFiniteGradientError(
                f"step {state.t + 1} rejected: {bad} non-finite gradient "
                f"values in {name!r}"
            )
    state.t += 1
    b1, b2 = config.betas
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = g.reshape(-1)
        if g.size != p.size:
            raise ShapeError(f"gradient size {g.size} for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros(p.size)
            state.v[name] = np.zeros(p.size)
        K.adamw_update(
            p.data, g, state.m[name], state.v[name], state.t,
            config.lr, b1, b2, config.eps, config.weight_decay,
        )
