"""Training loop: pair enumeration, determinism, divergence handling,
feature purity wiring, best-checkpoint selection."""

import numpy as np
import pytest

from more_lab.model import FeatureFlags, ModelConfig, RelationModel
from more_lab.purity import AblationPurityError, check_ablation_purity
from more_lab.training import (
    PreparedCorpus,
    TrainConfig,
    gold_indices,
    instance_input,
    pair_keys,
    predict,
    train,
)


@pytest.fixture(scope="module")
def model_setup(tiny_corpus, vocab):
    train_insts, dev_insts, schema = tiny_corpus
    cfg = ModelConfig.micro(vocab_size=len(vocab))
    return train_insts, dev_insts, schema, cfg


class TestInputs:
    def test_pair_enumeration_entity_major(self, model_setup, vocab):
        train_insts, _, schema, cfg = model_setup
        inst = next(i for i in train_insts if i.n_entities > 1)
        keys = pair_keys(inst)
        assert len(keys) == inst.n_entities * inst.n_objects
        assert keys[0][0] == "e0" and keys[inst.n_objects][0] == "e1"
        inp = instance_input(inst, vocab, cfg)
        assert len(inp.pairs) == len(keys)

    def test_gold_indices_align_with_triples(self, model_setup, vocab):
        train_insts, _, schema, cfg = model_setup
        inst = next(i for i in train_insts if i.gold)
        targets = gold_indices(inst, schema)
        for (eid, oid), tgt in zip(pair_keys(inst), targets):
            assert schema.all_labels[tgt] == inst.gold_label(eid, oid, schema)

    def test_attribute_flag_drops_captions(self, model_setup, vocab):
        train_insts, _, schema, cfg = model_setup
        inst = train_insts[0]
        with_a = instance_input(inst, vocab, cfg)
        cfg_off = cfg.with_features(FeatureFlags(attribute=False))
        without_a = instance_input(inst, vocab, cfg_off)
        assert with_a.pairs[0].text.attribute_marker_index is not None
        assert without_a.pairs[0].text.attribute_marker_index is None
        assert without_a.pairs[0].text.length < with_a.pairs[0].text.length

    def test_depth_flag_drops_depth_crops(self, model_setup, vocab):
        train_insts, _, schema, cfg = model_setup
        inst = train_insts[0]
        assert instance_input(inst, vocab, cfg).objects[0].depth is not None
        cfg_off = cfg.with_features(FeatureFlags(depth=False))
        assert instance_input(inst, vocab, cfg_off).objects[0].depth is None


class TestPurity:
    @pytest.mark.parametrize("features", [
        FeatureFlags(True, True, True),
        FeatureFlags(False, False, False),
        FeatureFlags(True, False, False),
        FeatureFlags(False, True, False),
        FeatureFlags(False, False, True),
    ])
    def test_each_cell_passes_both_directions(self, vocab, gen_setup, features):
        _, schema, _ = gen_setup
        cfg = ModelConfig.micro(vocab_size=len(vocab), features=features)
        check_ablation_purity(cfg, vocab, schema, seed=0, trials=3,
                              check_sensitivity=True)

    def test_leak_is_detected(self, vocab, gen_setup, monkeypatch):
        # force the position pathway on while the flag claims off
        _, schema, _ = gen_setup
        cfg = ModelConfig.micro(vocab_size=len(vocab),
                                features=FeatureFlags(position=False))
        model = RelationModel(cfg, seed=0)
        from more_lab.fusion import position_feature, position_fuse
        from more_lab.layers import EVAL

        def leaky_base(inst, rt=EVAL):
            state = model.visual_encoder.encode(
                inst.objects, use_depth=cfg.features.depth, rt=rt)
            feats = [position_feature(b, inst.image_size)
                     for b in inst.bboxes]
            return position_fuse(state.pooled, feats,
                                 model.params["fuse.loc.w"],
                                 model.params["fuse.loc.b"], enabled=True)

        monkeypatch.setattr(model, "visual_base", leaky_base)
        with pytest.raises(AblationPurityError):
            check_ablation_purity(cfg, vocab, schema, seed=0, trials=2,
                                  model=model)


class TestTrainLoop:
    def test_loss_curve_bitwise_reproducible(self, model_setup, vocab):
        train_insts, dev_insts, schema, cfg = model_setup
        curves = []
        for _ in range(2):
            model = RelationModel(cfg, seed=3)
            tc = TrainConfig(lr=1e-3, batch_size=16, dropout=0.3,
                             weight_decay=0.01, epochs=2, seed=3)
            res = train(train_insts[:10], dev_insts[:4], model, vocab, schema,
                        tc)
            curves.append(res.loss_curve)
        assert curves[0] == curves[1]

    def test_different_seed_changes_curve(self, model_setup, vocab):
        train_insts, dev_insts, schema, cfg = model_setup
        curves = []
        for seed in (0, 1):
            model = RelationModel(cfg, seed=seed)
            tc = TrainConfig(lr=1e-3, batch_size=16, dropout=0.0, epochs=1,
                             seed=seed)
            res = train(train_insts[:10], dev_insts[:4], model, vocab, schema,
                        tc)
            curves.append(res.loss_curve)
        assert curves[0] != curves[1]

    def test_best_dev_tracking(self, model_setup, vocab):
        train_insts, dev_insts, schema, cfg = model_setup
        model = RelationModel(cfg, seed=1)
        tc = TrainConfig(lr=2e-3, batch_size=16, dropout=0.0, epochs=3, seed=1)
        res = train(train_insts[:12], dev_insts[:4], model, vocab, schema, tc)
        assert res.best_dev_f1 == max(e.dev_f1 for e in res.log)
        assert set(res.best_params) == set(model.params)

    def test_nan_divergence_aborts_with_last_good(self, model_setup, vocab):
        train_insts, dev_insts, schema, cfg = model_setup
        model = RelationModel(cfg, seed=0)
        model.params["head.mlp.out.b"].data[0] = np.nan
        tc = TrainConfig(lr=1e-3, batch_size=16, dropout=0.0, epochs=2, seed=0)
        res = train(train_insts[:8], dev_insts[:4], model, vocab, schema, tc)
        assert res.diverged
        assert res.log == []  # aborted before finishing the first epoch
        assert set(res.best_params) == set(model.params)

    def test_predict_covers_every_pair(self, model_setup, vocab):
        train_insts, _, schema, cfg = model_setup
        model = RelationModel(cfg, seed=0)
        subset = train_insts[:6]
        records = predict(model, subset, vocab, schema)
        assert len(records) == sum(i.n_entities * i.n_objects for i in subset)
        labels = set(schema.all_labels)
        for r in records:
            assert r.pred in labels and r.gold in labels

    def test_prepared_corpus_counts(self, model_setup, vocab):
        train_insts, _, schema, cfg = model_setup
        prepared = PreparedCorpus(train_insts[:5], vocab, cfg, schema)
        assert len(prepared) == 5
        for inp, targets in zip(prepared.inputs, prepared.targets):
            assert len(inp.pairs) == len(targets)


class TestAblationGrid:
    def test_parallel_workers_match_sequential(self, tiny_corpus, vocab,
                                               monkeypatch):
        from more_lab.model import ModelConfig
        from more_lab.training import run_ablation_grid

        train_insts, dev_insts, schema = tiny_corpus
        cfg = ModelConfig.micro(vocab_size=len(vocab))
        tc = TrainConfig(lr=1e-3, batch_size=16, dropout=0.0, epochs=1,
                         seed=0)
        grid = (FeatureFlags(False, False, False), FeatureFlags(True, True, True))

        monkeypatch.setenv("MORE_LAB_THREADS", "1")
        sequential = run_ablation_grid(train_insts[:8], dev_insts[:4], vocab,
                                       schema, cfg, tc, grid=grid, seeds=(0,))
        monkeypatch.setenv("MORE_LAB_THREADS", "2")
        parallel = run_ablation_grid(train_insts[:8], dev_insts[:4], vocab,
                                     schema, cfg, tc, grid=grid, seeds=(0,))
        for a, b in zip(sequential, parallel):
            assert a.features == b.features
            assert a.seed_f1 == b.seed_f1


class TestCheckpointIntegration:
    def test_params_roundtrip_through_model(self, model_setup, vocab,
                                            tmp_path):
        from more_lab.checkpoint import load_checkpoint, save_checkpoint

        train_insts, _, schema, cfg = model_setup
        model = RelationModel(cfg, seed=5)
        path = str(tmp_path / "ckpt")
        save_checkpoint(model.params, path)
        clone = RelationModel(cfg, seed=99, params=load_checkpoint(path))
        inst = train_insts[0]
        inp = instance_input(inst, vocab, cfg)
        a = np.stack([lg.data for lg in model.forward_instance(inp)])
        b = np.stack([lg.data for lg in clone.forward_instance(inp)])
        assert np.array_equal(a, b)
