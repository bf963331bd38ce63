"""Command-line entry point.

Subcommands: gen-data, train, eval, ablate, gradcheck, stats. Every
command is deterministic under a fixed seed, and every command that
takes --out echoes its fully-resolved configuration there. Exit codes:
0 success, 2 bad input or path, 3 failed gradient-check threshold.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import config as C
from .checkpoint import load_checkpoint, save_checkpoint
from .datagen import (
    corpus_stats,
    generate_dataset,
    load_schema,
    load_split,
    load_vocabulary,
)
from .errors import InputError, MoreLabError
from .gradsuite import full_model_gradcheck
from .metrics import PairRecord, full_report
from .model import FeatureFlags, RelationModel
from .training import (
    GRID_DIRECTION,
    GRID_FULL,
    ablation_table,
    pair_keys,
    predict,
    run_ablation_grid,
    train,
)


def _add_common(sub: argparse.ArgumentParser):
    sub.add_argument("--config", help="INI config file (flags override it)")
    sub.add_argument("--out", help="run directory for outputs")


def _features_override(spec):
    if spec is None:
        return {}
    flags = FeatureFlags.from_string(spec)
    return {
        ("features", "position"): str(flags.position),
        ("features", "attribute"): str(flags.attribute),
        ("features", "depth"): str(flags.depth),
    }


def cmd_gen_data(args) -> int:
    overrides = {
        ("generator", "seed"): args.seed,
        ("generator", "train_size"): args.train,
        ("generator", "dev_size"): args.dev,
        ("generator", "test_size"): args.test,
        ("generator", "image_size"): args.image_size,
        ("generator", "objects_max"): args.objects_max,
        ("generator", "unit"): args.unit,
    }
    resolved = C.resolve(args.config, overrides)
    gen_cfg = C.build_generator_config(resolved)
    g = resolved["generator"]
    sizes = {"train": g["train_size"], "dev": g["dev_size"],
             "test": g["test_size"]}
    stats = generate_dataset(g["seed"], sizes, args.out, gen_cfg,
                             unit=g["unit"])
    C.write_resolved(args.out, resolved)
    print(json.dumps(stats, indent=1, sort_keys=True))
    return 0


def _load_corpus_for_model(corpus_dir: str, splits: list[str]):
    vocab = load_vocabulary(corpus_dir)
    schema = load_schema(corpus_dir)
    data = {s: load_split(corpus_dir, s) for s in splits}
    return vocab, schema, data


def cmd_train(args) -> int:
    overrides = {
        ("train", "seed"): args.seed,
        ("train", "epochs"): args.epochs,
        ("train", "batch_size"): args.batch,
        ("train", "lr"): args.lr,
        ("train", "dropout"): args.dropout,
        ("train", "weight_decay"): args.weight_decay,
        ("model", "preset"): args.preset,
    }
    overrides.update(_features_override(args.features))
    resolved = C.resolve(args.config, overrides)
    vocab, schema, data = _load_corpus_for_model(args.corpus, ["train", "dev"])
    model_cfg = C.build_model_config(resolved, vocab_size=len(vocab))
    train_cfg = C.build_train_config(resolved)
    model = RelationModel(model_cfg, seed=train_cfg.seed)
    started = time.time()
    result = train(data["train"], data["dev"], model, vocab, schema, train_cfg)
    os.makedirs(args.out, exist_ok=True)
    C.write_resolved(args.out, resolved)
    save_checkpoint(result.best_params, os.path.join(args.out, "checkpoint"))
    result.write_log(os.path.join(args.out, "log.csv"))
    summary = {
        "epochs_run": len(result.log),
        "best_dev_f1": result.best_dev_f1,
        "diverged": result.diverged,
        "seconds": round(time.time() - started, 2),
    }
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 3 if result.diverged else 0


def _records_from_files(pred_path: str, gold_path: str):
    if not os.path.isfile(pred_path):
        raise InputError(f"no predictions file at {pred_path}")
    if not os.path.isfile(gold_path):
        raise InputError(f"no gold file at {gold_path}")
    corpus_dir = os.path.dirname(os.path.abspath(gold_path))
    schema = load_schema(corpus_dir)
    split = os.path.splitext(os.path.basename(gold_path))[0]
    instances = load_split(corpus_dir, split, load_rasters=False)
    preds = {}
    with open(pred_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            key = (doc["instance_id"], doc["entity_id"], doc["object_id"])
            preds[key] = doc["relation"]
    records = []
    for inst in instances:
        for eid, oid in pair_keys(inst):
            key = (inst.id, eid, oid)
            if key not in preds:
                raise InputError(f"missing prediction for pair {key}")
            records.append(
                PairRecord(
                    instance_id=inst.id, entity_id=eid, object_id=oid,
                    gold=inst.gold_label(eid, oid, schema),
                    pred=preds[key],
                    n_entities=inst.n_entities, n_objects=inst.n_objects,
                )
            )
    return records, schema


def cmd_eval(args) -> int:
    if args.pred:
        if not args.gold:
            raise InputError("--pred requires --gold")
        records, schema = _records_from_files(args.pred, args.gold)
    else:
        if not (args.checkpoint and args.corpus):
            raise InputError("eval needs either --pred/--gold or "
                             "--checkpoint/--corpus")
        overrides = {("model", "preset"): args.preset}
        overrides.update(_features_override(args.features))
        resolved = C.resolve(args.config, overrides)
        vocab, schema, data = _load_corpus_for_model(args.corpus, [args.split])
        model_cfg = C.build_model_config(resolved, vocab_size=len(vocab))
        model = RelationModel(model_cfg, seed=0,
                              params=load_checkpoint(args.checkpoint))
        records = predict(model, data[args.split], vocab, schema)
        if args.out:
            C.write_resolved(args.out, resolved)
    report = full_report(records, schema)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "metrics.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
        with open(os.path.join(args.out, "metrics.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(report.table() + "\n")
        with open(os.path.join(args.out, "predictions.jsonl"), "w",
                  encoding="utf-8") as fh:
            for r in records:
                fh.write(json.dumps(
                    {"instance_id": r.instance_id, "entity_id": r.entity_id,
                     "object_id": r.object_id, "relation": r.pred},
                    sort_keys=True) + "\n")
    print(report.to_json())
    return 0


def cmd_ablate(args) -> int:
    overrides = {
        ("train", "seed"): args.seed,
        ("train", "epochs"): args.epochs,
        ("train", "batch_size"): args.batch,
        ("train", "lr"): args.lr,
        ("train", "dropout"): args.dropout,
        ("model", "preset"): args.preset,
    }
    resolved = C.resolve(args.config, overrides)
    vocab, schema, data = _load_corpus_for_model(args.corpus, ["train", "dev"])
    model_cfg = C.build_model_config(resolved, vocab_size=len(vocab))
    train_cfg = C.build_train_config(resolved)
    grid = GRID_FULL if args.grid == "full" else GRID_DIRECTION
    seeds = list(range(args.seeds))
    cells = run_ablation_grid(data["train"], data["dev"], vocab, schema,
                              model_cfg, train_cfg, grid=grid, seeds=seeds)
    table = ablation_table(cells)
    doc = [
        {"features": c.features.label(), "median_f1": c.median_f1,
         "accuracy": c.accuracy,
         "seed_f1": {str(k): v for k, v in c.seed_f1.items()}}
        for c in cells
    ]
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        C.write_resolved(args.out, resolved)
        with open(os.path.join(args.out, "ablation.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(args.out, "ablation.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(table + "\n")
    print(table)
    return 0


def cmd_gradcheck(args) -> int:
    result = full_model_gradcheck(size=args.instance_size, h=args.h,
                                  samples_per_param=args.samples,
                                  seed=args.seed)
    print(f"max relative error {result.max_rel_err:.3e} over "
          f"{result.sampled_elements} sampled elements of "
          f"{result.parameters} parameters (threshold {args.threshold:.1e})")
    return 0 if result.max_rel_err < args.threshold else 3


def cmd_stats(args) -> int:
    schema = load_schema(args.corpus)
    out = {}
    for split in ("train", "dev", "test"):
        path = os.path.join(args.corpus, f"{split}.jsonl")
        if os.path.isfile(path):
            instances = load_split(args.corpus, split, load_rasters=False)
            out[split] = corpus_stats(instances, schema)
    print(json.dumps(out, indent=1, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="more-lab",
        description="multimodal object-entity relation extraction lab",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--train", type=int)
    p.add_argument("--dev", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--unit", choices=["facts", "instances"])
    p.add_argument("--image-size", type=int, dest="image_size")
    p.add_argument("--objects-max", type=int, dest="objects_max")
    p.set_defaults(func=cmd_gen_data, out_required=True)

    p = subs.add_parser("train", help="train a relation extractor")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--features", help="comma list from p,a,d or 'none'")
    p.add_argument("--preset", choices=["desk", "toy", "micro"])
    p.set_defaults(func=cmd_train, out_required=True)

    p = subs.add_parser("eval", help="score predictions or a checkpoint")
    _add_common(p)
    p.add_argument("--pred")
    p.add_argument("--gold")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--split", default="test")
    p.add_argument("--features")
    p.add_argument("--preset", choices=["desk", "toy", "micro"])
    p.set_defaults(func=cmd_eval, out_required=False)

    p = subs.add_parser("ablate", help="train the feature-ablation grid")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--grid", choices=["full", "direction"], default="full")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--preset", choices=["desk", "toy", "micro"])
    p.set_defaults(func=cmd_ablate, out_required=False)

    p = subs.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--instance-size", choices=["small", "toy"],
                   default="small", dest="instance_size")
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck, out_required=False)

    p = subs.add_parser("stats", help="recompute corpus statistics")
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_stats, out_required=False)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "out_required", False) and not args.out:
        parser.error(f"{args.command} requires --out")
    try:
        return args.func(args)
    except (MoreLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
