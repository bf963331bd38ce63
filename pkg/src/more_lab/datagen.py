"""Synthetic news-style corpus generator with a known relation rule.

Every instance is a scene of z-ordered, attributed rectangle objects
rendered to RGB plus a stub depth raster, paired with a templated title
holding one or more named entity mentions. Gold labels come from a
deterministic rule: an (entity, object) pair is related iff the
object's category word lies in the affinity set of the entity's kind,
and the label is then a fixed function of (entity kind, object
category, box quadrant, front/back depth rank). Unmatched pairs are
``none``.

The rule is designed so each model feature carries information nothing
else supplies: the object category appears only in captions (never in
pixels), the quadrant only in box geometry, and the depth rank only in
the depth raster (z-order is sampled independently of box size and
position). Per-cardinality-cell none ratios, the entity/object count
mixture, and the label long tail are first-class configuration.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InputError, SchemaError
from .text import Vocabulary
from .visual import Bbox, depth_provider, load_raster, save_raster

# ---------------------------------------------------------------------------
# closed word lists (all disjoint; object categories never appear in titles)

ENTITY_KINDS = ("person", "group", "place")
KIND_PRIOR = (0.5, 0.3, 0.2)

AFFINITY = {
    "person": ("guard", "banner", "vehicle"),
    "group": ("sign", "machine"),
    "place": ("tower", "tree"),
}
NEUTRAL_CATEGORIES = ("crate", "fence", "lamp")
ALL_CATEGORIES = tuple(
    c for kind in ENTITY_KINDS for c in AFFINITY[kind]
) + NEUTRAL_CATEGORIES

COLORS = {
    "red": (0.85, 0.15, 0.15),
    "blue": (0.15, 0.25, 0.85),
    "green": (0.15, 0.70, 0.25),
    "yellow": (0.90, 0.85, 0.15),
    "purple": (0.55, 0.20, 0.75),
    "orange": (0.95, 0.55, 0.10),
    "teal": (0.10, 0.65, 0.65),
    "brown": (0.55, 0.35, 0.15),
}
SHAPES = ("square", "striped", "dotted", "checkered")
BACKGROUND = (0.92, 0.92, 0.92)

_P1 = ("var", "dor", "mel", "tan", "bek", "rin", "sol", "gra", "jor", "ned",
       "pav", "lum")
_P2 = ("ek", "an", "or", "is", "um", "el", "o", "ric", "as", "in")
PERSON_NAMES = tuple(a + b for a in _P1 for b in _P2)
PERSON_SURNAMES = tuple(
    a + b
    for a in ("mor", "ves", "kal", "dun", "fen", "har")
    for b in ("ett", "ard", "ien", "oss", "wick")
)
GROUP_NAMES = tuple(
    a + b
    for a in ("nova", "astra", "helio", "vexor", "orium", "zelta", "quen",
              "ardel", "mirex", "talvo")
    for b in ("corp", "union", "guild", "works", "league", "press")
)
PLACE_NAMES = tuple(
    a + b
    for a in ("north", "east", "stone", "green", "wind", "high", "fair",
              "red", "long", "ash")
    for b in ("vale", "ford", "burg", "mont", "haven", "field", "port")
)
KIND_NAMES = {"person": PERSON_NAMES, "group": GROUP_NAMES, "place": PLACE_NAMES}

VERBS = ("visits", "tours", "opens", "joins", "greets", "launches", "backs",
         "hosts", "marks", "leads")
CONNECTORS = ("and", "with", "near", "at")
FILLERS = ("the", "new", "old", "local", "annual", "historic", "festival",
           "rally", "summit", "project", "season", "forum", "crowd",
           "ceremony", "debate", "tour", "review", "opening")

# multi-object count pmf over 2..10 (geometric, calibrated so the corpus
# averages 3.8 objects per image) and multi-entity pmf over 2..4 (1.5
# entities per text overall)
_RHO = 0.8934749204125976
MULTI_OBJECT_COUNTS = tuple(range(2, 11))
MULTI_OBJECT_PMF = tuple(
    float(w) for w in (_RHO ** np.arange(9)) / (_RHO ** np.arange(9)).sum()
)
MULTI_ENTITY_COUNTS = (2, 3, 4)
MULTI_ENTITY_PMF = (0.75, 0.19, 0.06)

CELLS = ("ent=1,obj=1", "ent=1,obj>1", "ent>1,obj=1", "ent>1,obj>1")


@dataclass
class RelationSchema:
    """Ordered relation labels; the no-relation label is always last."""

    labels: list[str]
    none_label: str = "none"

    def __post_init__(self):
        if self.none_label in self.labels:
            raise SchemaError("the none label cannot appear among the labels")

    @property
    def all_labels(self) -> list[str]:
        return self.labels + [self.none_label]

    @property
    def size(self) -> int:
        return len(self.labels) + 1

    def index(self, label: str) -> int:
        if label == self.none_label:
            return len(self.labels)
        try:
            return self.labels.index(label)
        except ValueError:
            raise SchemaError(f"unknown relation label {label!r}") from None

    @classmethod
    def default(cls, n: int = 21) -> "RelationSchema":
        return cls(labels=[f"rel_{i + 1:02d}" for i in range(n)])

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"labels": self.labels, "none_label": self.none_label},
                      fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "RelationSchema":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(labels=list(raw["labels"]), none_label=raw["none_label"])


@dataclass
class GeneratorConfig:
    image_size: int = 64
    m_max: int = 10
    cell_probs: tuple = (0.222, 0.397, 0.121, 0.26)
    none_ratios: tuple = (0.05, 0.741, 0.3311, 0.809)
    zipf_exponent: float = 1.6
    category_share: float = 0.8  # chance a later entity copies an earlier kind
    box_fraction: tuple = (0.15, 0.45)
    two_token_mention: float = 0.3

    def __post_init__(self):
        if self.m_max > 10:
            raise InputError(f"objects per image capped at 10, got {self.m_max}")
        if abs(sum(self.cell_probs) - 1.0) > 1e-9:
            raise InputError("cardinality cell probabilities must sum to 1")


@dataclass
class SceneObject:
    bbox: Bbox
    z_rank: int  # 1 = nearest
    color: str
    shape: str
    category: str


@dataclass
class SceneEntity:
    mention: list[str]
    kind: str


@dataclass
class GoldTriple:
    entity_id: str
    object_id: str
    relation: str


@dataclass
class SceneSpec:
    image_size: tuple[int, int]
    objects: list[SceneObject]
    entities: list[SceneEntity]
    title: list[str]
    entity_spans: list[tuple[int, int]]
    triples: list[GoldTriple]


# ---------------------------------------------------------------------------
# rule g


def zipf_weights(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def quadrant(bbox: Bbox, image_size: tuple[int, int]) -> int:
    """0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right."""
    x, y, w, h = bbox
    iw, ih = image_size
    return int((x + w / 2) >= iw / 2) + 2 * int((y + h / 2) >= ih / 2)


def modifier(quad: int, front: bool) -> int:
    return (quad + (0 if front else 2)) % 3


def build_label_map(config: GeneratorConfig) -> tuple[RelationSchema, dict]:
    """Fixed (entity kind, object category, modifier) -> label mapping.

    Labels are named rel_01.. in descending expected frequency under the
    configured priors, so low label ids are the corpus head and high ids
    its long tail.
    """
    mod_weight = (0.375, 0.25, 0.375)  # quadrants uniform, front ~ half
    rows = []
    for kind, kp in zip(ENTITY_KINDS, KIND_PRIOR):
        cats = AFFINITY[kind]
        for cat, cw in zip(cats, zipf_weights(len(cats), config.zipf_exponent)):
            for mod in range(3):
                rows.append((kp * cw * mod_weight[mod], kind, cat, mod))
    rows.sort(key=lambda r: (-r[0], r[1], r[2], r[3]))
    schema = RelationSchema.default(len(rows))
    mapping = {
        (kind, cat, mod): schema.labels[i]
        for i, (_, kind, cat, mod) in enumerate(rows)
    }
    return schema, mapping


def relation_for_pair(
    scene: SceneSpec,
    entity_idx: int,
    object_idx: int,
    label_map: dict,
    schema: RelationSchema,
) -> str:
    """Re-evaluate rule g for one candidate pair."""
    ent = scene.entities[entity_idx]
    obj = scene.objects[object_idx]
    if obj.category not in AFFINITY[ent.kind]:
        return schema.none_label
    mod = modifier(quadrant(obj.bbox, scene.image_size), obj.z_rank == 1)
    return label_map[(ent.kind, obj.category, mod)]


# ---------------------------------------------------------------------------
# scene sampling


def _cell_of(n_ent: int, n_obj: int) -> int:
    return (2 if n_ent > 1 else 0) + (1 if n_obj > 1 else 0)


def cell_name(n_ent: int, n_obj: int) -> str:
    return CELLS[_cell_of(n_ent, n_obj)]


def _sample_bbox(rng: np.random.Generator, size: int, frac: tuple) -> Bbox:
    lo = max(2, int(frac[0] * size))
    hi = max(lo + 1, int(frac[1] * size))
    w = int(rng.integers(lo, hi + 1))
    h = int(rng.integers(lo, hi + 1))
    x = int(rng.integers(0, size - w + 1))
    y = int(rng.integers(0, size - h + 1))
    return (x, y, w, h)


def generate_scene(
    rng: np.random.Generator,
    schema: RelationSchema,
    label_map: dict,
    config: GeneratorConfig,
) -> SceneSpec:
    cell = int(rng.choice(4, p=config.cell_probs))
    n_ent = 1 if cell in (0, 1) else int(
        rng.choice(MULTI_ENTITY_COUNTS, p=MULTI_ENTITY_PMF))
    n_obj = 1 if cell in (0, 2) else int(
        rng.choice(MULTI_OBJECT_COUNTS, p=MULTI_OBJECT_PMF))
    n_obj = min(n_obj, config.m_max)

    kinds = [ENTITY_KINDS[int(rng.choice(3, p=KIND_PRIOR))]]
    for _ in range(n_ent - 1):
        if rng.random() < config.category_share:
            kinds.append(kinds[int(rng.integers(len(kinds)))])
        else:
            kinds.append(ENTITY_KINDS[int(rng.choice(3, p=KIND_PRIOR))])

    used_names: set[str] = set()
    entities = []
    for kind in kinds:
        pool = [n for n in KIND_NAMES[kind] if n not in used_names]
        name = pool[int(rng.integers(len(pool)))]
        used_names.add(name)
        mention = [name]
        if kind == "person" and rng.random() < config.two_token_mention:
            mention.append(PERSON_SURNAMES[int(rng.integers(len(PERSON_SURNAMES)))])
        entities.append(SceneEntity(mention=mention, kind=kind))

    # per-object match sampling, expectation-calibrated to the cell's
    # configured none ratio: an object matching kind c relates to every
    # entity of kind c, so the Bernoulli rate compensates for kind
    # multiplicity (M2 = sum of squared kind counts)
    mult = {k: kinds.count(k) for k in set(kinds)}
    m2 = sum(c * c for c in mult.values())
    rho = config.none_ratios[cell]
    p_match = min(1.0, (1.0 - rho) * n_ent * n_ent / m2)

    blocked = {c for k in set(kinds) for c in AFFINITY[k]}
    neutral_pool = [c for c in ALL_CATEGORIES if c not in blocked]
    color_names = list(COLORS)
    z_ranks = rng.permutation(n_obj) + 1
    objects = []
    for j in range(n_obj):
        if rng.random() < p_match:
            target = entities[int(rng.integers(n_ent))]
            cats = AFFINITY[target.kind]
            w = zipf_weights(len(cats), config.zipf_exponent)
            category = cats[int(rng.choice(len(cats), p=w))]
        else:
            category = neutral_pool[int(rng.integers(len(neutral_pool)))]
        objects.append(
            SceneObject(
                bbox=_sample_bbox(rng, config.image_size, config.box_fraction),
                z_rank=int(z_ranks[j]),
                color=color_names[int(rng.integers(len(color_names)))],
                shape=SHAPES[int(rng.integers(len(SHAPES)))],
                category=category,
            )
        )

    title: list[str] = []
    spans: list[tuple[int, int]] = []
    for i, ent in enumerate(entities):
        spans.append((len(title), len(title) + len(ent.mention)))
        title.extend(ent.mention)
        if i < n_ent - 1:
            title.append(CONNECTORS[int(rng.integers(len(CONNECTORS)))])
    title.append(VERBS[int(rng.integers(len(VERBS)))])
    for _ in range(int(rng.integers(1, 4))):
        title.append(FILLERS[int(rng.integers(len(FILLERS)))])

    size = (config.image_size, config.image_size)
    scene = SceneSpec(image_size=size, objects=objects, entities=entities,
                      title=title, entity_spans=spans, triples=[])
    for ei in range(n_ent):
        for oi in range(n_obj):
            rel = relation_for_pair(scene, ei, oi, label_map, schema)
            if rel != schema.none_label:
                scene.triples.append(GoldTriple(f"e{ei}", f"o{oi}", rel))
    return scene


# ---------------------------------------------------------------------------
# rendering and captioning


def caption_provider(obj: SceneObject) -> list[str]:
    """Deterministic attribute template standing in for a captioner."""
    return ["a", obj.color, obj.shape, obj.category]


def _fill_pattern(region: np.ndarray, shape: str, color, y0: int, x0: int):
    c = np.array(color).reshape(3, 1, 1)
    alt = c * 0.45
    region[:] = c
    _, h, w = region.shape
    yy = (np.arange(h) + y0)[None, :, None]
    xx = (np.arange(w) + x0)[None, None, :]
    if shape == "striped":
        mask = (yy // 2) % 2 == 1
        np.copyto(region, np.broadcast_to(alt, region.shape),
                  where=np.broadcast_to(mask, region.shape))
    elif shape == "dotted":
        mask = (yy % 3 == 1) & (xx % 3 == 1)
        np.copyto(region, np.broadcast_to(alt, region.shape),
                  where=np.broadcast_to(mask, region.shape))
    elif shape == "checkered":
        mask = ((yy // 2) + (xx // 2)) % 2 == 1
        np.copyto(region, np.broadcast_to(alt, region.shape),
                  where=np.broadcast_to(mask, region.shape))


def render(scene: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Paint objects far-to-near onto the background; depth from ranks."""
    w, h = scene.image_size
    rgb = np.empty((3, h, w))
    rgb[:] = np.array(BACKGROUND).reshape(3, 1, 1)
    for obj in sorted(scene.objects, key=lambda o: -o.z_rank):
        x, y, bw, bh = obj.bbox
        _fill_pattern(rgb[:, y : y + bh, x : x + bw], obj.shape,
                      COLORS[obj.color], y, x)
    depth = depth_provider(scene.image_size,
                           [(o.bbox, o.z_rank) for o in scene.objects])
    return rgb, depth


# ---------------------------------------------------------------------------
# instances and serialization


@dataclass
class EntityMention:
    id: str
    span: tuple[int, int]


@dataclass
class InstanceObject:
    id: str
    bbox: Bbox
    z_rank: int
    caption: list[str]


@dataclass
class Instance:
    id: str
    title: list[str]
    entities: list[EntityMention]
    objects: list[InstanceObject]
    gold: list[GoldTriple]
    rgb: Optional[np.ndarray] = None
    depth: Optional[np.ndarray] = None
    rgb_ref: Optional[str] = None
    depth_ref: Optional[str] = None
    image_size: tuple[int, int] = (64, 64)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def cell(self) -> str:
        return cell_name(self.n_entities, self.n_objects)

    def gold_label(self, entity_id: str, object_id: str, schema: RelationSchema) -> str:
        for t in self.gold:
            if t.entity_id == entity_id and t.object_id == object_id:
                return t.relation
        return schema.none_label


def scene_to_instance(scene: SceneSpec, iid: str, with_rasters: bool = True) -> Instance:
    rgb, depth = render(scene) if with_rasters else (None, None)
    return Instance(
        id=iid,
        title=list(scene.title),
        entities=[EntityMention(id=f"e{i}", span=span)
                  for i, span in enumerate(scene.entity_spans)],
        objects=[
            InstanceObject(id=f"o{j}", bbox=o.bbox, z_rank=o.z_rank,
                           caption=caption_provider(o))
            for j, o in enumerate(scene.objects)
        ],
        gold=list(scene.triples),
        rgb=rgb,
        depth=depth,
        image_size=scene.image_size,
    )


def instance_to_json(inst: Instance) -> str:
    doc = {
        "id": inst.id,
        "title": inst.title,
        "entities": [{"id": e.id, "span": list(e.span)} for e in inst.entities],
        "objects": [
            {"id": o.id, "bbox": list(o.bbox), "z_rank": o.z_rank,
             "caption": o.caption}
            for o in inst.objects
        ],
        "gold_triples": [
            {"entity_id": t.entity_id, "object_id": t.object_id,
             "relation": t.relation}
            for t in inst.gold
        ],
        "image_size": list(inst.image_size),
        "rgb": inst.rgb_ref,
        "depth": inst.depth_ref,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def instance_from_json(line: str) -> Instance:
    doc = json.loads(line)
    return Instance(
        id=doc["id"],
        title=list(doc["title"]),
        entities=[EntityMention(id=e["id"], span=tuple(e["span"]))
                  for e in doc["entities"]],
        objects=[
            InstanceObject(id=o["id"], bbox=tuple(o["bbox"]),
                           z_rank=o["z_rank"], caption=list(o["caption"]))
            for o in doc["objects"]
        ],
        gold=[GoldTriple(t["entity_id"], t["object_id"], t["relation"])
              for t in doc["gold_triples"]],
        rgb_ref=doc.get("rgb"),
        depth_ref=doc.get("depth"),
        image_size=tuple(doc.get("image_size", (64, 64))),
    )


def build_vocabulary() -> Vocabulary:
    words = set(PERSON_NAMES) | set(PERSON_SURNAMES) | set(GROUP_NAMES)
    words |= set(PLACE_NAMES) | set(VERBS) | set(CONNECTORS) | set(FILLERS)
    words |= set(COLORS) | set(SHAPES) | set(ALL_CATEGORIES) | {"a"}
    return Vocabulary(sorted(words))


# ---------------------------------------------------------------------------
# corpus generation

SPLITS = ("train", "dev", "test")


def _instance_rng(seed: int, split_idx: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(split_idx, index))
    return np.random.default_rng(ss)


def corpus_stats(instances: Sequence[Instance], schema: RelationSchema) -> dict:
    cells = {c: {"instances": 0, "pairs": 0, "none_pairs": 0} for c in CELLS}
    histogram = {label: 0 for label in schema.labels}
    total_pairs = 0
    total_facts = 0
    for inst in instances:
        cell = inst.cell
        pairs = inst.n_entities * inst.n_objects
        facts = len(inst.gold)
        cells[cell]["instances"] += 1
        cells[cell]["pairs"] += pairs
        cells[cell]["none_pairs"] += pairs - facts
        total_pairs += pairs
        total_facts += facts
        for t in inst.gold:
            histogram[t.relation] += 1
    for c in cells.values():
        c["none_ratio"] = (c["none_pairs"] / c["pairs"]) if c["pairs"] else 0.0
    n = len(instances)
    return {
        "instances": n,
        "facts": total_facts,
        "pairs": total_pairs,
        "mean_objects": sum(i.n_objects for i in instances) / n if n else 0.0,
        "mean_entities": sum(i.n_entities for i in instances) / n if n else 0.0,
        "cells": cells,
        "cell_instance_fractions": {
            c: cells[c]["instances"] / n if n else 0.0 for c in CELLS
        },
        "relation_histogram": histogram,
    }


def generate_split(
    seed: int,
    split: str,
    target: int,
    schema: RelationSchema,
    label_map: dict,
    config: GeneratorConfig,
    unit: str = "facts",
    with_rasters: bool = True,
) -> list[Instance]:
    """Instances for one split until `target` facts (or instances)."""
    if target < 1:
        raise InputError(f"split size must be >= 1, got {target}")
    if unit not in ("facts", "instances"):
        raise InputError(f"unknown sizing unit {unit!r}")
    split_idx = SPLITS.index(split)
    out: list[Instance] = []
    done = 0
    i = 0
    while done < target:
        rng = _instance_rng(seed, split_idx, i)
        scene = generate_scene(rng, schema, label_map, config)
        inst = scene_to_instance(scene, f"{split}-{i:06d}", with_rasters)
        out.append(inst)
        done += len(inst.gold) if unit == "facts" else 1
        i += 1
    return out


def write_corpus(
    out_dir: str,
    splits: dict[str, list[Instance]],
    schema: RelationSchema,
    config: GeneratorConfig,
) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    raster_dir = os.path.join(out_dir, "rasters")
    os.makedirs(raster_dir, exist_ok=True)
    stats: dict = {"splits": {}}
    for split, instances in splits.items():
        path = os.path.join(out_dir, f"{split}.jsonl")
        with open(path, "w", encoding="utf-8") as fh:
            for inst in instances:
                if inst.rgb is not None:
                    inst.rgb_ref = f"rasters/{inst.id}.rgb.bin"
                    inst.depth_ref = f"rasters/{inst.id}.depth.bin"
                    save_raster(os.path.join(out_dir, inst.rgb_ref), inst.rgb)
                    save_raster(os.path.join(out_dir, inst.depth_ref), inst.depth)
                fh.write(instance_to_json(inst) + "\n")
        stats["splits"][split] = corpus_stats(instances, schema)
    schema.save(os.path.join(out_dir, "schema.json"))
    build_vocabulary().save(os.path.join(out_dir, "vocab.txt"))
    stats["image_size"] = config.image_size
    with open(os.path.join(out_dir, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return stats


def generate_dataset(
    seed: int,
    sizes: dict[str, int],
    out_dir: str,
    config: Optional[GeneratorConfig] = None,
    unit: str = "facts",
) -> dict:
    """Generate and serialize a full train/dev/test corpus.

    ``sizes`` maps split name to a target count of relational facts
    (or instances when ``unit='instances'``); ids are disjoint across
    splits by construction.
    """
    config = config or GeneratorConfig()
    schema, label_map = build_label_map(config)
    splits = {
        split: generate_split(seed, split, sizes[split], schema, label_map,
                              config, unit)
        for split in SPLITS
        if split in sizes
    }
    return write_corpus(out_dir, splits, schema, config)


def load_split(corpus_dir: str, split: str, load_rasters: bool = True) -> list[Instance]:
    path = os.path.join(corpus_dir, f"{split}.jsonl")
    if not os.path.isfile(path):
        raise InputError(f"no such split file: {path}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            inst = instance_from_json(line)
            if load_rasters and inst.rgb_ref:
                inst.rgb = load_raster(os.path.join(corpus_dir, inst.rgb_ref))
                inst.depth = load_raster(os.path.join(corpus_dir, inst.depth_ref))
            out.append(inst)
    return out


def load_schema(corpus_dir: str) -> RelationSchema:
    return RelationSchema.load(os.path.join(corpus_dir, "schema.json"))


def load_vocabulary(corpus_dir: str) -> Vocabulary:
    return Vocabulary.load(os.path.join(corpus_dir, "vocab.txt"))
