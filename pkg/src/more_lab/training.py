"""Training loop, prediction, and the feature-ablation grid.

Every (entity, object) pair of every instance is one classification
example, gold none where no fact is annotated. A step packs whole
instances until the pair budget is reached so each instance's visual
encoding is computed once per step and shared across its pairs; the
step loss is the mean cross-entropy over the packed pairs, taped and
backpropagated as one graph.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .datagen import Instance, RelationSchema
from .errors import InputError
from .layers import Runtime
from .metrics import MetricsReport, PairRecord, full_report
from .model import (
    FeatureFlags,
    InstanceInput,
    ModelConfig,
    PairInput,
    RelationModel,
    build_pair_text,
)
from .optim import AdamWConfig, AdamWState, adamw_step
from .tensor import Tape, Tensor
from .text import Vocabulary
from .visual import crop_and_rescale


@dataclass
class TrainConfig:
    lr: float = 1e-3  # the reference setup uses 1e-5 with pretrained encoders
    batch_size: int = 32
    dropout: float = 0.5
    weight_decay: float = 0.01
    epochs: int = 20
    seed: int = 0
    features: FeatureFlags = field(default_factory=FeatureFlags)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    early_stop_train_f1: Optional[float] = None
    track_train_f1: bool = False
    eval_every: int = 1  # dev-F1 cadence; the final epoch always evaluates
    lr_schedule: str = "constant"  # or "linear": decay to lr/10 by the end

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise InputError(f"dropout {self.dropout} outside [0, 1)")
        if self.batch_size < 1:
            raise InputError("batch size must be >= 1")
        if self.eval_every < 1:
            raise InputError("eval_every must be >= 1")
        if self.lr_schedule not in ("constant", "linear"):
            raise InputError(f"unknown lr schedule {self.lr_schedule!r}")

    def lr_at(self, epoch: int) -> float:
        if self.lr_schedule == "constant" or self.epochs <= 1:
            return self.lr
        frac = (epoch - 1) / (self.epochs - 1)
        return self.lr * (1.0 - 0.9 * frac)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    dev_f1: Optional[float]  # None on epochs where dev eval was skipped
    train_f1: Optional[float] = None


@dataclass
class TrainResult:
    log: list[EpochLog]
    best_params: dict[str, Tensor]
    best_dev_f1: float
    diverged: bool = False

    @property
    def loss_curve(self) -> list[float]:
        return [e.loss for e in self.log]

    def write_log(self, path: str):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "dev_f1"])
            for e in self.log:
                writer.writerow([e.epoch, repr(e.loss),
                                 "" if e.dev_f1 is None else repr(e.dev_f1)])


def instance_input(
    inst: Instance,
    vocab: Vocabulary,
    cfg: ModelConfig,
) -> InstanceInput:
    """Model-ready inputs for every candidate pair of one instance."""
    if inst.rgb is None:
        raise InputError(f"instance {inst.id} has no rasters loaded")
    f = cfg.features
    objects = [
        crop_and_rescale(inst.rgb, inst.depth if f.depth else None, o.bbox,
                         cfg.crop_size)
        for o in inst.objects
    ]
    pairs = []
    for ent in inst.entities:
        for k, obj in enumerate(inst.objects):
            text = build_pair_text(vocab, inst.title, ent.span, obj.caption,
                                   f, cfg.n_max)
            pairs.append(PairInput(text=text, object_index=k))
    return InstanceInput(
        objects=objects,
        bboxes=[o.bbox for o in inst.objects],
        image_size=inst.image_size,
        pairs=pairs,
    )


def pair_keys(inst: Instance) -> list[tuple[str, str]]:
    return [(e.id, o.id) for e in inst.entities for o in inst.objects]


def gold_indices(inst: Instance, schema: RelationSchema) -> list[int]:
    return [
        schema.index(inst.gold_label(eid, oid, schema))
        for eid, oid in pair_keys(inst)
    ]


class PreparedCorpus:
    """Instances with cached model inputs for one feature configuration."""

    def __init__(self, instances: Sequence[Instance], vocab: Vocabulary,
                 cfg: ModelConfig, schema: RelationSchema):
        self.instances = list(instances)
        self.inputs = [instance_input(i, vocab, cfg) for i in self.instances]
        self.targets = [gold_indices(i, schema) for i in self.instances]
        self.schema = schema

    def __len__(self):
        return len(self.instances)


def _predict_prepared(model: RelationModel, prepared: PreparedCorpus) -> list[PairRecord]:
    records = []
    for inst, inp, targets in zip(prepared.instances, prepared.inputs,
                                  prepared.targets):
        logits = model.forward_instance(inp)
        for (eid, oid), gold_idx, lg in zip(pair_keys(inst), targets, logits):
            records.append(
                PairRecord(
                    instance_id=inst.id,
                    entity_id=eid,
                    object_id=oid,
                    gold=prepared.schema.all_labels[gold_idx],
                    pred=prepared.schema.all_labels[int(np.argmax(lg.data))],
                    n_entities=inst.n_entities,
                    n_objects=inst.n_objects,
                )
            )
    return records


def predict(
    model: RelationModel,
    instances: Sequence[Instance],
    vocab: Vocabulary,
    schema: RelationSchema,
) -> list[PairRecord]:
    prepared = PreparedCorpus(instances, vocab, model.cfg, schema)
    return _predict_prepared(model, prepared)


def train(
    train_instances: Sequence[Instance],
    dev_instances: Sequence[Instance],
    model: RelationModel,
    vocab: Vocabulary,
    schema: RelationSchema,
    config: TrainConfig,
) -> TrainResult:
    """Train in place; keeps the best-dev-F1 parameter snapshot."""
    cfg = model.cfg
    prepared = PreparedCorpus(train_instances, vocab, cfg, schema)
    prepared_dev = PreparedCorpus(dev_instances, vocab, cfg, schema)
    opt_state = AdamWState()

    def snapshot() -> dict[str, Tensor]:
        return {n: Tensor(p.data.copy(), list(p.shape), requires_grad=True)
                for n, p in model.params.items()}

    best = snapshot()
    best_f1 = -1.0
    log: list[EpochLog] = []
    order_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(1,)))
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(len(prepared))
        opt_cfg = AdamWConfig(lr=config.lr_at(epoch), betas=config.betas,
                              eps=config.eps,
                              weight_decay=config.weight_decay)
        epoch_loss = 0.0
        epoch_pairs = 0
        batch: list[int] = []
        batch_pairs = 0

        def run_step(indices: list[int]) -> Optional[float]:
            nonlocal step
            step += 1
            rt = Runtime(
                train=True,
                dropout=config.dropout,
                rng=np.random.default_rng(
                    np.random.SeedSequence(entropy=config.seed,
                                           spawn_key=(2, step))),
            )
            with Tape() as tape:
                logits_rows = []
                targets: list[int] = []
                for i in indices:
                    inp = prepared.inputs[i]
                    h_v0 = model.visual_base(inp, rt)
                    for pair, tgt in zip(inp.pairs, prepared.targets[i]):
                        lg = model.forward_pair(pair, h_v0, rt)
                        logits_rows.append(T.reshape(lg, [1, cfg.n_relations]))
                        targets.append(tgt)
                loss = T.cross_entropy(T.concat(logits_rows, axis=0), targets)
                value = loss.item()
                if not np.isfinite(value):
                    return None
                tape.backward(loss)
            grads = {n: p.grad for n, p in model.params.items()
                     if p.grad is not None}
            adamw_step(model.params, grads, opt_state, opt_cfg)
            for p in model.params.values():
                p.zero_grad()
            return value * len(targets)

        diverged = False
        for i in order:
            batch.append(int(i))
            batch_pairs += len(prepared.inputs[i].pairs)
            if batch_pairs >= config.batch_size:
                out = run_step(batch)
                if out is None:
                    diverged = True
                    break
                epoch_loss += out
                epoch_pairs += batch_pairs
                batch, batch_pairs = [], 0
        if not diverged and batch:
            out = run_step(batch)
            if out is None:
                diverged = True
            else:
                epoch_loss += out
                epoch_pairs += batch_pairs
        if diverged:
            return TrainResult(log=log, best_params=best, best_dev_f1=best_f1,
                               diverged=True)

        if epoch % config.eval_every == 0 or epoch == config.epochs:
            dev_records = _predict_prepared(model, prepared_dev)
            dev_f1 = full_report(dev_records, schema).f1
        else:
            dev_f1 = None
        entry = EpochLog(epoch=epoch, loss=epoch_loss / max(epoch_pairs, 1),
                         dev_f1=dev_f1)
        if config.track_train_f1 or config.early_stop_train_f1 is not None:
            train_records = _predict_prepared(model, prepared)
            entry.train_f1 = full_report(train_records, schema).f1
        log.append(entry)
        if dev_f1 is not None and dev_f1 > best_f1:
            best_f1 = dev_f1
            best = snapshot()
        if (
            config.early_stop_train_f1 is not None
            and entry.train_f1 is not None
            and entry.train_f1 >= config.early_stop_train_f1
        ):
            break
    return TrainResult(log=log, best_params=best, best_dev_f1=best_f1)


# ---------------------------------------------------------------------------
# feature-ablation grid

GRID_FULL = (
    FeatureFlags(False, False, False),
    FeatureFlags(True, False, False),
    FeatureFlags(False, True, False),
    FeatureFlags(False, False, True),
    FeatureFlags(True, True, False),
    FeatureFlags(True, False, True),
    FeatureFlags(False, True, True),
    FeatureFlags(True, True, True),
)

GRID_DIRECTION = (
    FeatureFlags(False, False, False),
    FeatureFlags(True, False, False),
    FeatureFlags(False, True, False),
    FeatureFlags(False, False, True),
    FeatureFlags(True, True, True),
)


@dataclass
class AblationCell:
    features: FeatureFlags
    seed_f1: dict[int, float]
    accuracy: float
    report: Optional[MetricsReport] = None

    @property
    def median_f1(self) -> float:
        return float(np.median(list(self.seed_f1.values())))


def _worker_count() -> int:
    raw = os.environ.get("MORE_LAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_ablation_cell(
    train_instances: Sequence[Instance],
    eval_instances: Sequence[Instance],
    vocab: Vocabulary,
    schema: RelationSchema,
    base_model_cfg: ModelConfig,
    base_train_cfg: TrainConfig,
    features: FeatureFlags,
    seeds: Sequence[int],
) -> AblationCell:
    from .purity import check_ablation_purity  # cheap contract re-check

    cfg = base_model_cfg.with_features(features)
    check_ablation_purity(cfg, vocab, schema, seed=0)
    seed_f1: dict[int, float] = {}
    last_report: Optional[MetricsReport] = None
    for seed in seeds:
        model = RelationModel(cfg, seed=seed)
        tc = replace(base_train_cfg, seed=seed, features=features)
        result = train(train_instances, dev_instances=eval_instances,
                       model=model, vocab=vocab, schema=schema, config=tc)
        model.load_params(result.best_params)
        records = predict(model, eval_instances, vocab, schema)
        last_report = full_report(records, schema)
        seed_f1[seed] = last_report.f1
    return AblationCell(
        features=features,
        seed_f1=seed_f1,
        accuracy=last_report.accuracy if last_report else 0.0,
        report=last_report,
    )


def run_ablation_grid(
    train_instances: Sequence[Instance],
    eval_instances: Sequence[Instance],
    vocab: Vocabulary,
    schema: RelationSchema,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    grid: Sequence[FeatureFlags] = GRID_FULL,
    seeds: Sequence[int] = (0, 1, 2),
) -> list[AblationCell]:
    """Train one model per feature cell (times seeds); optionally in
    parallel processes capped by MORE_LAB_THREADS."""
    workers = _worker_count()
    if workers <= 1 or len(grid) <= 1:
        return [
            run_ablation_cell(train_instances, eval_instances, vocab, schema,
                              model_cfg, train_cfg, features, seeds)
            for features in grid
        ]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=min(workers, len(grid))) as pool:
        futures = [
            pool.submit(run_ablation_cell, train_instances, eval_instances,
                        vocab, schema, model_cfg, train_cfg, features, seeds)
            for features in grid
        ]
        return [f.result() for f in futures]


def ablation_table(cells: Sequence[AblationCell]) -> str:
    lines = [f"{'P':>3}{'A':>3}{'D':>3}{'accuracy':>12}{'median F1':>12}"]
    for cell in cells:
        f = cell.features
        lines.append(
            f"{'x' if f.position else '':>3}{'x' if f.attribute else '':>3}"
            f"{'x' if f.depth else '':>3}{100 * cell.accuracy:>12.2f}"
            f"{100 * cell.median_f1:>12.2f}"
        )
    return "\n".join(lines)
