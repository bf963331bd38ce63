"""Cross-modal fusion stack and the relation classification heads.

Each fusion layer runs prefix-guided attention then correlation-aware
fusion. On the prefix side, the text stream self-attends as usual while
visual queries attend over the concatenation of visual keys/values and
the text stream's keys/values, projected with the *same* matrices the
text side uses, so the text acts as an attention prefix. The
correlation step aggregates visual rows per text token through a
row-softmax over token-wise similarities and injects the aggregate into
the text FFN (ReLU, per its defining formula); the visual stream gets a
plain GELU FFN. Residual/norm placement follows each stream's own
convention: norm-after-sublayer for text, norm-before-sublayer for
visual.

The full head concatenates the object's fused row with the caption
marker state, projects, concatenates with the entity marker state and
applies a two-layer MLP. Ties in the final argmax go to the lowest
class index; the no-relation label sits last so real relations win
exact ties.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import layers as L
from . import tensor as T
from .errors import ShapeError
from .layers import Runtime
from .tensor import Tensor
from .visual import Bbox, check_bbox


@dataclass
class PositionFeature:
    """Normalized box geometry: center, extent, and area, all in [0, 1]."""

    x_center: float
    y_center: float
    w_box: float
    h_box: float
    s_box: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.x_center, self.y_center, self.w_box, self.h_box, self.s_box]
        )


def position_feature(bbox: Bbox, image_size: tuple[int, int]) -> PositionFeature:
    check_bbox(bbox, image_size)
    x, y, w, h = bbox
    iw, ih = image_size
    return PositionFeature(
        x_center=(x + w / 2) / iw,
        y_center=(y + h / 2) / ih,
        w_box=w / iw,
        h_box=h / ih,
        s_box=(w * h) / (iw * ih),
    )


def position_fuse(
    pooled: Tensor,
    feats: Optional[Sequence[PositionFeature]],
    w_loc: Tensor,
    b_loc: Tensor,
    enabled: bool = True,
) -> Tensor:
    """Add the projected position features; identity when disabled."""
    if not enabled:
        return pooled
    if feats is None or len(feats) != pooled.shape[0]:
        raise ShapeError(
            f"{0 if feats is None else len(feats)} position rows for "
            f"{pooled.shape[0]} pooled rows"
        )
    loc = Tensor(np.stack([f.as_array() for f in feats]))
    return T.add(pooled, T.linear(loc, w_loc, b_loc))


@dataclass
class FusionConfig:
    layers: int
    d: int
    heads: int
    ffn: int
    n_relations: int
    ln_eps: float = 1e-5


@dataclass
class MultimodalState:
    """Per-layer text and visual stream states through the fusion stack."""

    text: list[Tensor]  # each n×d
    visual: list[Tensor]  # each m×d

    @property
    def final_text(self) -> Tensor:
        return self.text[-1]

    @property
    def final_visual(self) -> Tensor:
        return self.visual[-1]


class MEncoder:
    def __init__(self, cfg: FusionConfig, params: dict, prefix: str,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.params = params
        self.prefix = prefix
        d, ffn = cfg.d, cfg.ffn
        L.make_param(params, f"{prefix}.loc.w",
                     rng.normal(0.0, np.sqrt(2.0 / (5 + d)), size=(5, d)))
        L.make_param(params, f"{prefix}.loc.b", np.zeros(d))
        for i in range(cfg.layers):
            lp = f"{prefix}.l{i}"
            L.make_mha(params, f"{lp}.t_attn", rng, d)
            L.make_ln(params, f"{lp}.t_ln1", d)
            for name, din, dout in (
                ("q", d, d), ("k", d, d), ("v", d, d), ("o", d, d),
            ):
                L.make_linear(params, f"{lp}.v_attn.{name}", rng, din, dout)
            L.make_ln(params, f"{lp}.v_ln1", d)
            # correlation-aware text FFN: ReLU(x W1 + b1 + Agg W3) W2 + b2
            L.make_linear(params, f"{lp}.caf.in", rng, d, ffn)
            L.make_param(params, f"{lp}.caf.w3",
                         rng.normal(0.0, np.sqrt(2.0 / (d + ffn)), size=(d, ffn)))
            L.make_linear(params, f"{lp}.caf.out", rng, ffn, d)
            L.make_ln(params, f"{lp}.t_ln2", d)
            L.make_ffn(params, f"{lp}.v_ffn", rng, d, ffn)
            L.make_ln(params, f"{lp}.v_ln2", d)

    def pgi(
        self,
        x_t: Tensor,
        x_v: Tensor,
        layer: int,
        text_mask: Optional[np.ndarray] = None,
        rt: Runtime = L.EVAL,
        return_weights: bool = False,
    ):
        """Prefix-guided interaction for one layer: both stream updates."""
        cfg, p = self.cfg, self.params
        lp = f"{self.prefix}.l{layer}"
        n = x_t.shape[0]
        if n > 0:
            a_t = L.apply_mha_self(p, f"{lp}.t_attn", x_t, cfg.heads,
                                   text_mask, rt)
            out_t = T.add(L.apply_ln(p, f"{lp}.t_ln1", a_t, cfg.ln_eps), x_t)
        else:
            out_t = x_t

        ln_v = L.apply_ln(p, f"{lp}.v_ln1", x_v, cfg.ln_eps)
        q = L.apply_linear(p, f"{lp}.v_attn.q", ln_v)
        k_self = L.apply_linear(p, f"{lp}.v_attn.k", ln_v)
        v_self = L.apply_linear(p, f"{lp}.v_attn.v", ln_v)
        m = x_v.shape[0]
        if n > 0:
            # prefix keys/values reuse the text stream's own projections
            k_txt = L.apply_linear(p, f"{lp}.t_attn.k", x_t)
            v_txt = L.apply_linear(p, f"{lp}.t_attn.v", x_t)
            keys = T.concat([k_self, k_txt], axis=0)
            vals = T.concat([v_self, v_txt], axis=0)
            mask = np.concatenate(
                [np.ones(m, dtype=bool),
                 np.ones(n, dtype=bool) if text_mask is None else text_mask]
            )
        else:
            keys, vals, mask = k_self, v_self, None
        attn = T.mha_core(q, keys, vals, cfg.heads, key_mask=mask,
                          return_weights=return_weights)
        if return_weights:
            attn, weights = attn
        a_v = rt.drop(L.apply_linear(p, f"{lp}.v_attn.o", attn))
        out_v = T.add(a_v, x_v)
        if return_weights:
            return out_t, out_v, weights
        return out_t, out_v

    def caf(
        self,
        x_t: Tensor,
        x_v: Tensor,
        layer: int,
        rt: Runtime = L.EVAL,
        return_weights: bool = False,
    ):
        """Correlation-aware fusion for one layer: both stream updates."""
        cfg, p = self.cfg, self.params
        lp = f"{self.prefix}.l{layer}"
        sim = T.matmul(x_t, T.transpose(x_v))
        attn = T.softmax(sim)
        agg = T.matmul(attn, x_v)
        pre = T.add(L.apply_linear(p, f"{lp}.caf.in", x_t),
                    T.matmul(agg, p[f"{lp}.caf.w3"]))
        f_t = rt.drop(L.apply_linear(p, f"{lp}.caf.out", T.relu(pre)))
        out_t = T.add(L.apply_ln(p, f"{lp}.t_ln2", f_t, cfg.ln_eps), x_t)

        f_v = L.apply_ffn(p, f"{lp}.v_ffn",
                          L.apply_ln(p, f"{lp}.v_ln2", x_v, cfg.ln_eps), rt)
        out_v = T.add(f_v, x_v)
        if return_weights:
            return out_t, out_v, attn.array.copy()
        return out_t, out_v

    def encode(
        self,
        h_t0: Tensor,
        h_v0: Tensor,
        text_mask: Optional[np.ndarray] = None,
        rt: Runtime = L.EVAL,
    ) -> MultimodalState:
        text, visual = [h_t0], [h_v0]
        x_t, x_v = h_t0, h_v0
        for i in range(self.cfg.layers):
            x_t, x_v = self.pgi(x_t, x_v, i, text_mask, rt)
            x_t, x_v = self.caf(x_t, x_v, i, rt)
            text.append(x_t)
            visual.append(x_v)
        return MultimodalState(text=text, visual=visual)


class ClassifierHead:
    """Pair head: object row + caption marker -> projection -> MLP with
    the entity marker state."""

    def __init__(self, cfg: FusionConfig, params: dict, prefix: str,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.params = params
        self.prefix = prefix
        d = cfg.d
        L.make_linear(params, f"{prefix}.merge", rng, 2 * d, d)
        L.make_linear(params, f"{prefix}.mlp.in", rng, 2 * d, d)
        L.make_linear(params, f"{prefix}.mlp.out", rng, d, cfg.n_relations)

    def logits(
        self,
        state: MultimodalState,
        k: int,
        entity_marker_index: int,
        attribute_marker_index: Optional[int],
    ) -> Tensor:
        p, px = self.params, self.prefix
        h_v = state.final_visual
        h_t = state.final_text
        if not 0 <= k < h_v.shape[0]:
            raise IndexError(f"object index {k} out of {h_v.shape[0]}")
        n = h_t.shape[0]
        if not 0 <= entity_marker_index < n:
            raise IndexError(f"entity marker {entity_marker_index} out of {n}")
        # with the attribute feature off there is no caption marker; the
        # [CLS] state stands in so the head keeps one shape across cells
        o_idx = 0 if attribute_marker_index is None else attribute_marker_index
        if not 0 <= o_idx < n:
            raise IndexError(f"attribute marker {o_idx} out of {n}")
        h_vk = T.slice_rows(h_v, k, k + 1)
        h_o = T.slice_rows(h_t, o_idx, o_idx + 1)
        h_s = T.slice_rows(h_t, entity_marker_index, entity_marker_index + 1)
        m_k = L.apply_linear(p, f"{px}.merge", T.concat([h_vk, h_o], axis=1))
        hid = T.gelu(L.apply_linear(p, f"{px}.mlp.in", T.concat([h_s, m_k], axis=1)))
        return T.reshape(L.apply_linear(p, f"{px}.mlp.out", hid),
                         [self.cfg.n_relations])


class BaselineHead:
    """Adaptation head for plain encoder pairs: MLP([entity, object])."""

    def __init__(self, d: int, n_relations: int, params: dict, prefix: str,
                 rng: np.random.Generator):
        self.n_relations = n_relations
        self.params = params
        self.prefix = prefix
        L.make_linear(params, f"{prefix}.mlp.in", rng, 2 * d, d)
        L.make_linear(params, f"{prefix}.mlp.out", rng, d, n_relations)

    def logits(self, t_h: Tensor, v_t: Tensor) -> Tensor:
        if len(t_h.shape) == 1:
            t_h = T.reshape(t_h, [1, t_h.shape[0]])
        if len(v_t.shape) == 1:
            v_t = T.reshape(v_t, [1, v_t.shape[0]])
        hid = T.gelu(L.apply_linear(self.params, f"{self.prefix}.mlp.in",
                                    T.concat([t_h, v_t], axis=1)))
        return T.reshape(
            L.apply_linear(self.params, f"{self.prefix}.mlp.out", hid),
            [self.n_relations],
        )


def predict_label(logits: Tensor | np.ndarray) -> int:
    """Argmax with ties going to the lowest class index."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return int(np.argmax(arr.reshape(-1)))
