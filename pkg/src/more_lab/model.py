"""End-to-end relation extractor: text encoder, RGB-D visual encoder,
position fusion, fusion stack, classification head.

Feature switches change the information flow, not the parameter
shapes: with the position feature off the pooled visual rows enter the
fusion stack unmodified; with the attribute feature off inputs are
built without captions and the head anchors on [CLS]; with the depth
feature off the visual sequence holds RGB tokens only, so outputs are
independent of depth rasters by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import InputError
from .fusion import (
    ClassifierHead,
    FusionConfig,
    MEncoder,
    position_feature,
    position_fuse,
)
from .layers import EVAL, Runtime
from .tensor import Tensor
from .text import TextEncoder, TextEncoderConfig, TextInput, Vocabulary, build_input
from .visual import Bbox, ObjectImage, VisualEncoder, VisualEncoderConfig


@dataclass(frozen=True)
class FeatureFlags:
    position: bool = True
    attribute: bool = True
    depth: bool = True

    def label(self) -> str:
        tags = [t for t, on in (("P", self.position), ("A", self.attribute),
                                ("D", self.depth)) if on]
        return "+".join(tags) if tags else "(none)"

    @classmethod
    def from_string(cls, spec: str) -> "FeatureFlags":
        parts = {p.strip().lower() for p in spec.split(",") if p.strip()}
        unknown = parts - {"p", "a", "d", "none"}
        if unknown:
            raise InputError(f"unknown feature flags {sorted(unknown)}")
        return cls("p" in parts, "a" in parts, "d" in parts)


@dataclass
class ModelConfig:
    d: int = 64
    heads: int = 4
    layers_text: int = 4
    layers_visual: int = 4
    layers_fusion: int = 3
    ffn_mult: int = 4
    vocab_size: int = 512
    n_max: int = 96
    m_max: int = 10
    crop_size: int = 64
    patch_size: int = 16
    n_relations: int = 22
    ln_eps: float = 1e-5
    features: FeatureFlags = field(default_factory=FeatureFlags)

    def __post_init__(self):
        if self.d % self.heads:
            raise InputError(f"width {self.d} not divisible by {self.heads} heads")
        if self.crop_size % self.patch_size:
            raise InputError("crop size must be divisible by patch size")

    @property
    def ffn(self) -> int:
        return self.ffn_mult * self.d

    @property
    def u(self) -> int:
        return (self.crop_size // self.patch_size) ** 2

    def with_features(self, features: FeatureFlags) -> "ModelConfig":
        return replace(self, features=features)

    @classmethod
    def desk(cls, vocab_size: int, **overrides) -> "ModelConfig":
        return cls(vocab_size=vocab_size, **overrides)

    @classmethod
    def toy(cls, vocab_size: int, **overrides) -> "ModelConfig":
        base = dict(d=32, heads=2, layers_text=2, layers_visual=2,
                    layers_fusion=1, ffn_mult=2, crop_size=32)
        base.update(overrides)
        return cls(vocab_size=vocab_size, **base)

    @classmethod
    def micro(cls, vocab_size: int, **overrides) -> "ModelConfig":
        base = dict(d=8, heads=2, layers_text=1, layers_visual=1,
                    layers_fusion=1, ffn_mult=2, crop_size=32)
        base.update(overrides)
        return cls(vocab_size=vocab_size, **base)


@dataclass
class PairInput:
    """Everything one candidate (entity, object) pair needs at forward time."""

    text: TextInput
    object_index: int


@dataclass
class InstanceInput:
    """Shared per-instance visual inputs plus one PairInput per candidate."""

    objects: list[ObjectImage]
    bboxes: list[Bbox]
    image_size: tuple[int, int]
    pairs: list[PairInput]


class RelationModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0,
                 params: Optional[dict[str, Tensor]] = None):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
        self.text_encoder = TextEncoder(
            TextEncoderConfig(cfg.layers_text, cfg.d, cfg.heads, cfg.ffn,
                              cfg.vocab_size, cfg.n_max, cfg.ln_eps),
            self.params, "text", rng,
        )
        self.visual_encoder = VisualEncoder(
            VisualEncoderConfig(cfg.layers_visual, cfg.d, cfg.heads, cfg.ffn,
                                cfg.crop_size, cfg.patch_size, cfg.m_max,
                                cfg.ln_eps),
            self.params, "visual", rng,
        )
        fusion_cfg = FusionConfig(cfg.layers_fusion, cfg.d, cfg.heads, cfg.ffn,
                                  cfg.n_relations, cfg.ln_eps)
        self.m_encoder = MEncoder(fusion_cfg, self.params, "fuse", rng)
        self.head = ClassifierHead(fusion_cfg, self.params, "head", rng)
        if params is not None:
            self.load_params(params)

    def load_params(self, source: dict[str, Tensor]):
        if set(source) != set(self.params):
            missing = sorted(set(self.params) - set(source))
            extra = sorted(set(source) - set(self.params))
            raise InputError(f"parameter mismatch: missing {missing}, extra {extra}")
        for name, t in self.params.items():
            if list(source[name].shape) != list(t.shape):
                raise InputError(f"shape mismatch for {name!r}")
            t.data[:] = source[name].data

    def visual_base(self, inst: InstanceInput, rt: Runtime = EVAL) -> Tensor:
        """Encode all objects once per instance and fuse position features."""
        f = self.cfg.features
        state = self.visual_encoder.encode(inst.objects, use_depth=f.depth, rt=rt)
        feats = None
        if f.position:
            feats = [position_feature(b, inst.image_size) for b in inst.bboxes]
        return position_fuse(state.pooled, feats, self.params["fuse.loc.w"],
                             self.params["fuse.loc.b"], enabled=f.position)

    def forward_pair(self, pair: PairInput, h_v0: Tensor,
                     rt: Runtime = EVAL) -> Tensor:
        text_state = self.text_encoder.encode(pair.text, rt=rt)
        mask = np.asarray(pair.text.pad_mask, dtype=bool)
        state = self.m_encoder.encode(
            text_state.final, h_v0,
            text_mask=None if mask.all() else mask, rt=rt,
        )
        return self.head.logits(state, pair.object_index,
                                pair.text.entity_marker_index,
                                pair.text.attribute_marker_index)

    def forward_instance(self, inst: InstanceInput,
                         rt: Runtime = EVAL) -> list[Tensor]:
        h_v0 = self.visual_base(inst, rt)
        return [self.forward_pair(pair, h_v0, rt) for pair in inst.pairs]


def build_pair_text(
    vocab: Vocabulary,
    title_tokens: Sequence[str],
    entity_span: tuple[int, int],
    caption_tokens: Optional[Sequence[str]],
    features: FeatureFlags,
    n_max: int,
) -> TextInput:
    """Pair text input honoring the attribute switch."""
    cap = list(caption_tokens) if (features.attribute and caption_tokens is not None) else None
    return build_input(vocab, title_tokens, entity_span, cap, n_max=n_max)
