"""Bitwise feature-isolation checks for the ablation switches.

A disabled feature must leave logits bit-identical when its input is
mutated: boxes feed only the position pathway (crops are held fixed),
captions only the attribute pathway, depth rasters only the depth
pathway. An enabled feature must make logits sensitive to at least one
of a batch of random mutations. These contracts are cheap and are
re-verified before every ablation-grid cell trains.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

import numpy as np

from .datagen import (
    ALL_CATEGORIES,
    COLORS,
    SHAPES,
    GeneratorConfig,
    Instance,
    RelationSchema,
    build_label_map,
    generate_scene,
    scene_to_instance,
)
from .errors import MoreLabError
from .model import InstanceInput, ModelConfig, RelationModel
from .text import Vocabulary


class AblationPurityError(MoreLabError):
    """A feature switch leaks or fails to carry information."""


def probe_instance(seed: int = 0, image_size: int = 32) -> Instance:
    """A small deterministic multi-object instance with rasters."""
    gen_cfg = GeneratorConfig(image_size=image_size)
    schema, label_map = build_label_map(gen_cfg)
    index = 0
    while True:
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(99, index)))
        scene = generate_scene(rng, schema, label_map, gen_cfg)
        if len(scene.objects) >= 2 and len(scene.entities) >= 1:
            return scene_to_instance(scene, f"probe-{index:06d}")
        index += 1


def _logits_matrix(model: RelationModel, inp: InstanceInput) -> np.ndarray:
    return np.stack([lg.data for lg in model.forward_instance(inp)])


def _mutate_bboxes(inst: Instance, rng: np.random.Generator) -> Instance:
    w, h = inst.image_size
    objects = []
    for o in inst.objects:
        bw = int(rng.integers(2, max(3, w // 2)))
        bh = int(rng.integers(2, max(3, h // 2)))
        x = int(rng.integers(0, w - bw + 1))
        y = int(rng.integers(0, h - bh + 1))
        objects.append(replace(o, bbox=(x, y, bw, bh)))
    return replace(inst, objects=objects)


def _mutate_captions(inst: Instance, rng: np.random.Generator) -> Instance:
    colors, shapes, cats = list(COLORS), list(SHAPES), list(ALL_CATEGORIES)
    objects = [
        replace(
            o,
            caption=["a",
                     colors[int(rng.integers(len(colors)))],
                     shapes[int(rng.integers(len(shapes)))],
                     cats[int(rng.integers(len(cats)))]],
        )
        for o in inst.objects
    ]
    return replace(inst, objects=objects)


def _mutate_depth(inst: Instance, rng: np.random.Generator) -> Instance:
    return replace(inst, depth=rng.random(inst.depth.shape))


def check_ablation_purity(
    model_cfg: ModelConfig,
    vocab: Vocabulary,
    schema: RelationSchema,
    seed: int = 0,
    trials: int = 3,
    check_sensitivity: bool = False,
    model: Optional[RelationModel] = None,
) -> None:
    """Raise AblationPurityError unless every switch isolates its input."""
    from .training import instance_input  # local import to avoid a cycle

    inst = probe_instance(seed, image_size=model_cfg.crop_size)
    model = model or RelationModel(model_cfg, seed=seed)
    base_input = instance_input(inst, vocab, model_cfg)
    base = _logits_matrix(model, base_input)
    f = model_cfg.features
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(7,)))

    def logits_with(mutated: Instance, keep_crops: bool = False) -> np.ndarray:
        if keep_crops:
            # boxes feed position features only; crops stay as rendered
            inp = InstanceInput(
                objects=base_input.objects,
                bboxes=[o.bbox for o in mutated.objects],
                image_size=mutated.image_size,
                pairs=base_input.pairs,
            )
        else:
            inp = instance_input(mutated, vocab, model_cfg)
        return _logits_matrix(model, inp)

    checks = (
        ("position", f.position, lambda r: logits_with(_mutate_bboxes(inst, r),
                                                       keep_crops=True)),
        ("attribute", f.attribute, lambda r: logits_with(_mutate_captions(inst, r))),
        ("depth", f.depth, lambda r: logits_with(_mutate_depth(inst, r))),
    )
    for name, enabled, run in checks:
        if enabled and not check_sensitivity:
            continue
        outcomes = [bool(np.array_equal(base, run(rng))) for _ in range(trials)]
        if enabled:
            if all(outcomes):
                raise AblationPurityError(
                    f"{name} feature is on but logits ignored {trials} "
                    f"input mutations"
                )
        else:
            if not all(outcomes):
                raise AblationPurityError(
                    f"{name} feature is off but logits changed under an "
                    f"input mutation"
                )
