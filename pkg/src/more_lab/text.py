"""Tokenization, marker-wrapped input construction, and the text encoder.

The input layout is ``[CLS] title-with-<s>entity</s> [SEP] <o> caption
</o>`` with segment 0 up to and including [SEP] and segment 1 after.
The caption carries the candidate object's attribute description; when
the attribute feature is off the caption block is absent and the
sequence ends at [SEP]. Sequences are capped at ``n_max`` tokens by
truncating caption tokens first, then trailing title tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import layers as L
from . import tensor as T
from .errors import InputError, SpanError
from .layers import Runtime
from .tensor import Tensor

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
ENT_OPEN, ENT_CLOSE, ATTR_OPEN, ATTR_CLOSE = "<s>", "</s>", "<o>", "</o>"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, ENT_OPEN, ENT_CLOSE, ATTR_OPEN, ATTR_CLOSE)


class Vocabulary:
    """Closed token vocabulary; unknown lookups map to [UNK], never fail.

    Serialized one token per line, id = line number. The special tokens
    always occupy ids 0..7 regardless of the word list.
    """

    def __init__(self, words: Sequence[str]):
        tokens = list(SPECIAL_TOKENS)
        seen = set(tokens)
        for w in words:
            if w not in seen:
                tokens.append(w)
                seen.add(w)
        self.tokens = tokens
        self._ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids.get(token, self._ids[UNK])

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        if tokens[: len(SPECIAL_TOKENS)] != list(SPECIAL_TOKENS):
            raise InputError(f"vocabulary at {path} lacks the special-token header")
        return cls(tokens[len(SPECIAL_TOKENS):])


@dataclass
class TextInput:
    """One tokenized classification input with marker positions."""

    token_ids: list[int]
    segment_ids: list[int]
    entity_marker_index: int
    attribute_marker_index: Optional[int]
    pad_mask: list[bool] = field(default_factory=list)  # True = real token

    def __post_init__(self):
        if not self.pad_mask:
            self.pad_mask = [True] * len(self.token_ids)

    @property
    def length(self) -> int:
        return len(self.token_ids)


def build_input(
    vocab: Vocabulary,
    title_tokens: Sequence[str],
    entity_span: tuple[int, int],
    caption_tokens: Optional[Sequence[str]] = None,
    n_max: int = 96,
    pad_to: Optional[int] = None,
) -> TextInput:
    """Assemble the marker-wrapped token sequence for one candidate pair.

    ``entity_span`` is a half-open token range inside the title naming
    the query entity; ``caption_tokens`` is the candidate object's
    caption or None when the attribute feature is off.
    """
    title = list(title_tokens)
    if not title:
        raise InputError("empty title")
    s, e = entity_span
    if not (0 <= s < e <= len(title)):
        raise SpanError(f"entity span ({s}, {e}) outside title of {len(title)} tokens")

    head = [CLS] + title[:s] + [ENT_OPEN] + title[s:e] + [ENT_CLOSE]
    tail = title[e:] + [SEP]
    reserved = 3 if caption_tokens is not None else 0  # <o>, </o> and one caption slot
    over = len(head) + len(tail) - (n_max - reserved)
    if over > 0:
        # Caption tokens are dropped first (below); the title then loses
        # trailing tokens, but never the wrapped entity or [SEP].
        droppable = len(title) - e
        if over > droppable:
            raise InputError(f"wrapped entity does not fit in {n_max} tokens")
        tail = title[e : len(title) - over] + [SEP]
    tokens = head + tail
    sep_index = len(tokens) - 1

    attribute_marker_index: Optional[int] = None
    if caption_tokens is not None:
        budget = n_max - len(tokens) - 2
        cap = list(caption_tokens)[: max(budget, 0)]
        attribute_marker_index = len(tokens)
        tokens = tokens + [ATTR_OPEN] + cap + [ATTR_CLOSE]

    segments = [0 if i <= sep_index else 1 for i in range(len(tokens))]
    mask = [True] * len(tokens)
    if pad_to is not None:
        if pad_to < len(tokens) or pad_to > n_max:
            raise InputError(f"pad_to {pad_to} outside [{len(tokens)}, {n_max}]")
        extra = pad_to - len(tokens)
        tokens = tokens + [PAD] * extra
        segments = segments + [0] * extra
        mask = mask + [False] * extra

    return TextInput(
        token_ids=[vocab.id(t) for t in tokens],
        segment_ids=segments,
        entity_marker_index=tokens.index(ENT_OPEN),
        attribute_marker_index=attribute_marker_index,
        pad_mask=mask,
    )


@dataclass
class TextEncoderState:
    """Hidden states per layer 0..L, all n×d."""

    hidden: list[Tensor]
    config: "TextEncoderConfig"

    @property
    def final(self) -> Tensor:
        return self.hidden[-1]


@dataclass
class TextEncoderConfig:
    layers: int
    d: int
    heads: int
    ffn: int
    vocab_size: int
    n_max: int = 96
    ln_eps: float = 1e-5


class TextEncoder:
    """Token + position + segment embeddings through L residual layers."""

    def __init__(self, cfg: TextEncoderConfig, params: dict, prefix: str,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.params = params
        self.prefix = prefix
        L.make_param(params, f"{prefix}.tok_emb",
                     rng.normal(0.0, 0.02, size=(cfg.vocab_size, cfg.d)))
        L.make_param(params, f"{prefix}.pos_emb",
                     rng.normal(0.0, 0.02, size=(cfg.n_max, cfg.d)))
        L.make_param(params, f"{prefix}.seg_emb",
                     rng.normal(0.0, 0.02, size=(2, cfg.d)))
        for i in range(cfg.layers):
            L.make_encoder_layer(params, f"{prefix}.l{i}", rng, cfg.d, cfg.ffn)

    def encode(self, inp: TextInput, rt: Runtime = L.EVAL) -> TextEncoderState:
        cfg, p, px = self.cfg, self.params, self.prefix
        n = inp.length
        if n > cfg.n_max:
            raise InputError(f"sequence of {n} tokens exceeds n_max={cfg.n_max}")
        tok = T.gather_rows(p[f"{px}.tok_emb"], inp.token_ids)
        pos = T.slice_rows(p[f"{px}.pos_emb"], 0, n)
        seg = T.gather_rows(p[f"{px}.seg_emb"], inp.segment_ids)
        h = rt.drop(T.add(T.add(tok, pos), seg))
        mask = np.asarray(inp.pad_mask, dtype=bool)
        key_mask = None if mask.all() else mask
        hidden = [h]
        for i in range(cfg.layers):
            h = L.encoder_layer_postln(
                p, f"{px}.l{i}", h, cfg.heads, cfg.ln_eps, key_mask, rt
            )
            hidden.append(h)
        return TextEncoderState(hidden=hidden, config=cfg)
