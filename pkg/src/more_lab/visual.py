"""Depth-aware visual encoding of per-object RGB-D crops.

Each object contributes its RGB crop and, when the depth feature is on,
its depth crop. Both are cut into non-overlapping P×P patches, linearly
projected (separate projections for the 3-channel and 1-channel
inputs, no bias) and given one shared positional embedding. All objects
of an instance share a single interleaved token sequence
[RGB1, D1, RGB2, D2, ...] so attention may cross objects; there is no
object-order positional signal, which keeps the encoder equivariant to
object permutation. After the transformer stack each object's tokens
are mean-pooled into one row.

Also hosts the deterministic scene-depth provider that stands in for a
monocular depth estimator, and the flat binary raster format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from . import layers as L
from . import tensor as T
from .errors import EmptySceneError, GeometryError, InputError
from .layers import Runtime
from .tensor import Tensor

Bbox = tuple[int, int, int, int]  # x, y, w, h in pixels, y down


def check_bbox(bbox: Bbox, image_size: tuple[int, int]):
    x, y, w, h = bbox
    iw, ih = image_size
    if w <= 0 or h <= 0:
        raise GeometryError(f"degenerate bbox {bbox}")
    if x < 0 or y < 0 or x + w > iw or y + h > ih:
        raise GeometryError(f"bbox {bbox} outside {iw}x{ih} image")


@dataclass
class ObjectImage:
    """One object's rescaled RGB (and optional depth) crop."""

    rgb: Tensor  # 3×H×W in [0, 1]
    depth: Optional[Tensor]  # 1×H×W in [0, 1], larger = nearer
    bbox: Bbox  # source box in original image coordinates

    @property
    def hw(self) -> tuple[int, int]:
        return self.rgb.shape[1], self.rgb.shape[2]


def crop_and_rescale(
    rgb_raster: np.ndarray,
    depth_raster: Optional[np.ndarray],
    bbox: Bbox,
    out_size: int,
) -> ObjectImage:
    """Cut the bbox region and rescale: bilinear RGB, nearest depth."""
    h, w = rgb_raster.shape[1], rgb_raster.shape[2]
    check_bbox(bbox, (w, h))
    x, y, bw, bh = bbox
    rgb_crop = rgb_raster[:, y : y + bh, x : x + bw]
    rgb = K.resize_bilinear(rgb_crop, out_size, out_size)
    depth = None
    if depth_raster is not None:
        depth_crop = depth_raster[:, y : y + bh, x : x + bw]
        depth = Tensor(K.resize_nearest(depth_crop, out_size, out_size))
    return ObjectImage(rgb=Tensor(rgb), depth=depth, bbox=bbox)


def extract_patches(image: np.ndarray, patch: int) -> np.ndarray:
    """Non-overlapping P×P patches of a (C, H, W) image, row-major patch
    order, each flattened as (py, px, channel)."""
    c, h, w = image.shape
    if h % patch or w % patch:
        raise InputError(f"{h}x{w} image not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    tiles = image.reshape(c, gh, patch, gw, patch).transpose(1, 3, 2, 4, 0)
    return np.ascontiguousarray(tiles).reshape(gh * gw, patch * patch * c)


@dataclass
class VisualEncoderConfig:
    layers: int
    d: int
    heads: int
    ffn: int
    crop_size: int = 64
    patch_size: int = 16
    m_max: int = 10
    ln_eps: float = 1e-5

    @property
    def u(self) -> int:
        return (self.crop_size // self.patch_size) ** 2


@dataclass
class VisualEncoderState:
    """Patch embeddings, per-layer sequence states, per-object pooling."""

    patch_embeddings: list[tuple[Tensor, Optional[Tensor]]]
    hidden: list[Tensor]  # layer 0..L, each (streams·m·u)×d
    pooled: Tensor  # m×d
    depth_used: bool

    @property
    def final(self) -> Tensor:
        return self.hidden[-1]


class VisualEncoder:
    def __init__(self, cfg: VisualEncoderConfig, params: dict, prefix: str,
                 rng: np.random.Generator):
        if cfg.crop_size % cfg.patch_size:
            raise InputError("crop size must be divisible by patch size")
        self.cfg = cfg
        self.params = params
        self.prefix = prefix
        p2 = cfg.patch_size * cfg.patch_size
        std_rgb = np.sqrt(2.0 / (3 * p2 + cfg.d))
        std_d = np.sqrt(2.0 / (p2 + cfg.d))
        L.make_param(params, f"{prefix}.rgb_proj",
                     rng.normal(0.0, std_rgb, size=(3 * p2, cfg.d)))
        L.make_param(params, f"{prefix}.depth_proj",
                     rng.normal(0.0, std_d, size=(p2, cfg.d)))
        L.make_param(params, f"{prefix}.pos_emb",
                     rng.normal(0.0, 0.02, size=(cfg.u, cfg.d)))
        for i in range(cfg.layers):
            L.make_encoder_layer(params, f"{prefix}.l{i}", rng, cfg.d, cfg.ffn)

    def patch_embed(self, obj: ObjectImage) -> tuple[Tensor, Optional[Tensor]]:
        """Project patches to d and add the shared positional embedding."""
        cfg, p, px = self.cfg, self.params, self.prefix
        if obj.hw != (cfg.crop_size, cfg.crop_size):
            raise InputError(f"object crop {obj.hw} != {cfg.crop_size}")
        pos = p[f"{px}.pos_emb"]
        rgb_patches = Tensor(extract_patches(obj.rgb.array, cfg.patch_size))
        e_rgb = T.add(T.matmul(rgb_patches, p[f"{px}.rgb_proj"]), pos)
        e_depth = None
        if obj.depth is not None:
            d_patches = Tensor(extract_patches(obj.depth.array, cfg.patch_size))
            e_depth = T.add(T.matmul(d_patches, p[f"{px}.depth_proj"]), pos)
        return e_rgb, e_depth

    def encode(self, objects: Sequence[ObjectImage], use_depth: bool = True,
               rt: Runtime = L.EVAL) -> VisualEncoderState:
        cfg, p, px = self.cfg, self.params, self.prefix
        m = len(objects)
        if m == 0:
            raise EmptySceneError("no objects to encode")
        if m > cfg.m_max:
            raise InputError(f"{m} objects exceeds m_max={cfg.m_max}")
        embeds = [self.patch_embed(o) for o in objects]
        if use_depth and any(e_d is None for _, e_d in embeds):
            raise InputError("depth feature is on but an object lacks a depth crop")
        tokens: list[Tensor] = []
        for e_rgb, e_depth in embeds:
            tokens.append(e_rgb)
            if use_depth:
                tokens.append(e_depth)
        h = rt.drop(T.concat(tokens, axis=0))
        hidden = [h]
        for i in range(cfg.layers):
            h = L.encoder_layer_preln(p, f"{px}.l{i}", h, cfg.heads, cfg.ln_eps,
                                      None, rt)
            hidden.append(h)
        span = (2 if use_depth else 1) * cfg.u
        pooled_rows = [
            T.reshape(T.avg_pool(T.slice_rows(h, k * span, (k + 1) * span)),
                      [1, cfg.d])
            for k in range(m)
        ]
        pooled = T.concat(pooled_rows, axis=0) if m > 1 else pooled_rows[0]
        return VisualEncoderState(
            patch_embeddings=embeds, hidden=hidden, pooled=pooled,
            depth_used=use_depth,
        )


def depth_provider(
    image_size: tuple[int, int], objects: Sequence[tuple[Bbox, int]]
) -> np.ndarray:
    """Scene depth raster from z-ranked boxes: painter's algorithm.

    Rank 1 is nearest; a pixel takes the nearness (m - rank + 1) / m of
    the nearest box covering it, background stays 0.
    """
    w, h = image_size
    depth = np.zeros((1, h, w))
    m = len(objects)
    for bbox, rank in sorted(objects, key=lambda br: -br[1]):
        check_bbox(bbox, image_size)
        x, y, bw, bh = bbox
        depth[0, y : y + bh, x : x + bw] = (m - rank + 1) / m
    return depth


# ---------------------------------------------------------------------------
# flat binary raster format: header (H, W, C as little-endian u32), then
# float64 little-endian pixels in (C, H, W) row-major order.

_HEADER = struct.Struct("<III")


def save_raster(path: str, raster: np.ndarray):
    c, h, w = raster.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(h, w, c))
        fh.write(np.ascontiguousarray(raster, dtype="<f8").tobytes())


def load_raster(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        h, w, c = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<f8", count=c * h * w)
    return data.astype(np.float64).reshape(c, h, w)
