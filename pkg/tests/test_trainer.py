from pathlib import Path

import numpy as np
import pytest

from metricboost.checkpoint import load_checkpoint, save_checkpoint
from metricboost.data_io import SynthSpec, synth_gaussian
from metricboost.errors import InvalidArgument, NumericFailure
from metricboost.linalg import make_rng
from metricboost.optim import Optimizer
from metricboost.trainer import (
    TrainConfig,
    build_model,
    init_solver,
    run,
    sample_batch,
    train_step,
)

DATA_DIR = Path(__file__).parent / "data"


def _toy_set(seed=7, classes=6, per_class=6, h=12, spread=8.0, noise=1.0):
    return synth_gaussian(SynthSpec(
        classes=classes, per_class=per_class, feature_dim=h,
        cluster_spread=spread, noise=noise, seed=seed,
    ))


class TestConfig:
    def test_validation(self):
        with pytest.raises(InvalidArgument):
            TrainConfig(batch_classes=1)
        with pytest.raises(InvalidArgument):
            TrainConfig(samples_per_class=1)
        with pytest.raises(InvalidArgument):
            TrainConfig(diversity="both")
        with pytest.raises(InvalidArgument):
            TrainConfig(lambda_div=-1.0)

    def test_lambda_defaults_by_kind(self):
        assert TrainConfig(diversity="none").resolved_lambda_div() == 0.0
        assert TrainConfig(diversity="activation").resolved_lambda_div() == 1e-2
        assert TrainConfig(diversity="adversarial").resolved_lambda_div() == 1e-3
        assert TrainConfig(diversity="activation", lambda_div=0.5).resolved_lambda_div() == 0.5

    def test_partition_resolution(self):
        assert TrainConfig(embedding_dim=512, num_groups=3).resolve_partition().sizes == (85, 170, 257)
        assert TrainConfig(embedding_dim=512, num_groups=3, partition="preset").resolve_partition().sizes == (96, 160, 256)
        assert TrainConfig(group_sizes=(4, 4)).resolve_partition().sizes == (4, 4)
        with pytest.raises(InvalidArgument):
            TrainConfig(embedding_dim=100, num_groups=3, partition="preset").resolve_partition()
        with pytest.raises(InvalidArgument):
            TrainConfig(partition="explicit").resolve_partition()


class TestSampleBatch:
    def test_pair_counts(self):
        fs = _toy_set(classes=2, per_class=4)
        batch = sample_batch(fs, 2, 2, make_rng(0))
        y = batch.pairs.y
        assert (y == 1).sum() == 2  # C(2,2) per class x 2 classes
        assert (y == 0).sum() == 4  # 2 x 2 cross-class

    def test_single_class_rejected(self):
        fs = _toy_set(classes=2, per_class=4)
        # Carve a single-class subset.
        from metricboost.data_io import FeatureSet

        mask = fs.labels == 0
        solo = FeatureSet(labels=np.zeros(mask.sum(), dtype=np.uint32),
                          features=fs.features[mask], n_classes=1)
        with pytest.raises(InvalidArgument):
            sample_batch(solo, 2, 2, make_rng(0))

    def test_deterministic_composition(self):
        fs = _toy_set()
        a = sample_batch(fs, 3, 3, make_rng(5))
        b = sample_batch(fs, 3, 3, make_rng(5))
        np.testing.assert_array_equal(a.indices, b.indices)
        np.testing.assert_array_equal(a.pairs.index_a, b.pairs.index_a)
        np.testing.assert_array_equal(a.pairs.y, b.pairs.y)

    def test_small_class_sampled_with_replacement(self):
        fs = _toy_set(classes=3, per_class=2)
        batch = sample_batch(fs, 3, 4, make_rng(1))
        assert len(batch.indices) == 12  # classes of size 2 upsampled to 4

    def test_max_pairs_cap_keeps_positives(self):
        fs = _toy_set(classes=4, per_class=4)
        batch = sample_batch(fs, 4, 4, make_rng(2), max_pairs=30)
        y = batch.pairs.y
        assert (y == 1).sum() == 4 * 6  # all positives kept
        assert len(y) == max(30, 24)  # negatives trimmed to the budget

    def test_triplet_mining(self):
        fs = _toy_set(classes=3, per_class=3)
        batch = sample_batch(fs, 3, 3, make_rng(3), mine="triplets")
        t = batch.triplets
        assert len(t) == 3 * 3  # C(3,2) positive pairs per class x 3 classes
        labels = batch.labels
        assert np.all(labels[t.anchor] == labels[t.positive])
        assert np.all(labels[t.anchor] != labels[t.negative])

    def test_too_many_classes_requested(self):
        fs = _toy_set(classes=3, per_class=3)
        with pytest.raises(InvalidArgument):
            sample_batch(fs, 5, 2, make_rng(0))


class TestTrainStep:
    def test_lambda_zero_matches_pure_run(self):
        fs = _toy_set()
        base = dict(embedding_dim=8, num_groups=2, iterations=60, lr=1e-3,
                    batch_classes=3, samples_per_class=3, seed=4, regressor_hidden=6)
        pure = run(TrainConfig(diversity="none", **base), fs)
        act0 = run(TrainConfig(diversity="activation", lambda_div=0.0, **base), fs)
        adv0 = run(TrainConfig(diversity="adversarial", lambda_div=0.0, **base), fs)
        np.testing.assert_array_equal(pure.model.W, act0.model.W)
        np.testing.assert_array_equal(pure.model.W, adv0.model.W)

    def test_diversity_never_touches_backbone(self):
        # Within one step, the backbone update must be identical whether or
        # not the regularizer is on (its gradient reaches W only); W differs.
        fs = _toy_set()
        base = dict(embedding_dim=8, num_groups=2, iterations=1, lr=1e-3,
                    batch_classes=3, samples_per_class=3, seed=4,
                    use_backbone=True, backbone_dim=10)
        for kind, extra in (("activation", {}), ("adversarial", {"regressor_hidden": 6})):
            plain_cfg = TrainConfig(diversity="none", **base)
            reg_cfg = TrainConfig(diversity=kind, lambda_div=5.0, **base, **extra)
            plain = run(plain_cfg, fs)
            reg = run(reg_cfg, fs)
            np.testing.assert_array_equal(
                plain.model.backbone.weight, reg.model.backbone.weight
            )
            np.testing.assert_array_equal(
                plain.model.backbone.bias, reg.model.backbone.bias
            )
            assert not np.array_equal(plain.model.W, reg.model.W)

    def test_frozen_backbone_never_moves(self):
        fs = _toy_set()
        cfg = TrainConfig(embedding_dim=8, num_groups=2, iterations=30, lr=1e-3,
                          batch_classes=3, samples_per_class=3, seed=4,
                          use_backbone=True, backbone_dim=10, backbone_trainable=False)
        rng = make_rng(cfg.seed)
        model, _ = build_model(cfg, fs.feature_dim, rng)
        before = model.backbone.weight.copy()
        result = run(cfg, fs)
        np.testing.assert_array_equal(result.model.backbone.weight, before)

    def test_one_step_descends_metric_loss(self):
        fs = _toy_set(classes=2, per_class=6, noise=0.8)
        cfg = TrainConfig(embedding_dim=8, num_groups=2, lr=1e-3, iterations=1,
                          batch_classes=2, samples_per_class=4, seed=0)
        rng = make_rng(cfg.seed)
        model, bank = build_model(cfg, fs.feature_dim, rng)
        opt = Optimizer(kind="adam", lr=cfg.lr)
        batch = sample_batch(fs, 2, 4, rng)
        X = fs.features[batch.indices]
        from metricboost.boosting import accumulate_W_gradient

        before = accumulate_W_gradient(model, X, batch.pairs, cfg.loss_spec()).loss
        train_step(cfg, model, bank, opt, X, batch)
        after = accumulate_W_gradient(model, X, batch.pairs, cfg.loss_spec()).loss
        assert after < before

    def test_mismatched_mining_rejected(self):
        fs = _toy_set()
        cfg = TrainConfig(loss="triplet", iterations=1)
        rng = make_rng(0)
        model, bank = build_model(cfg, fs.feature_dim, rng)
        batch = sample_batch(fs, 2, 2, rng, mine="pairs")
        with pytest.raises(InvalidArgument):
            train_step(cfg, model, bank, Optimizer(), fs.features[batch.indices], batch)


class TestRun:
    def test_zero_iterations_returns_initial_model(self):
        fs = _toy_set()
        cfg = TrainConfig(embedding_dim=8, num_groups=2, iterations=0, seed=2)
        result = run(cfg, fs)
        rng = make_rng(2)
        fresh, _ = build_model(cfg, fs.feature_dim, rng)
        np.testing.assert_array_equal(result.model.W, fresh.W)
        assert result.metrics_rows == []

    def test_deterministic_metrics(self, tmp_path):
        fs = _toy_set()
        cfg = TrainConfig(embedding_dim=8, num_groups=2, iterations=100,
                          eval_interval=50, seed=3, batch_classes=3,
                          samples_per_class=3)
        a = run(cfg, fs, metrics_path=tmp_path / "a.csv")
        b = run(cfg, fs, metrics_path=tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
        assert a.metrics_csv() == b.metrics_csv()
        assert len(a.metrics_rows) == 2

    def test_resume_bitwise(self, tmp_path):
        fs = _toy_set()
        base = dict(embedding_dim=8, num_groups=2, lr=1e-3, batch_classes=3,
                    samples_per_class=3, seed=6, diversity="adversarial",
                    regressor_hidden=6)
        full = run(TrainConfig(iterations=120, **base), fs)
        half = run(TrainConfig(iterations=60, **base), fs)
        path = tmp_path / "half.ckpt"
        save_checkpoint(path, half.model, iteration=half.iteration,
                        rng_state=half.rng.bit_generator.state,
                        optimizer=half.optimizer, bank=half.bank)
        resumed = run(TrainConfig(iterations=120, **base), fs,
                      resume=load_checkpoint(path))
        np.testing.assert_array_equal(full.model.W, resumed.model.W)
        np.testing.assert_array_equal(full.bank[(0, 1)].W2, resumed.bank[(0, 1)].W2)

    def test_triplet_training_runs(self):
        fs = _toy_set()
        cfg = TrainConfig(loss="triplet", embedding_dim=8, num_groups=2,
                          iterations=50, seed=1, batch_classes=3, samples_per_class=3)
        result = run(cfg, fs)
        assert np.all(np.isfinite(result.model.W))

    def test_separable_two_class_set_reaches_full_recall(self):
        # Separability witness: wide clusters, small noise, single learner.
        fs = synth_gaussian(SynthSpec(classes=2, per_class=8, feature_dim=16,
                                      cluster_spread=10.0, noise=0.2, seed=5))
        cfg = TrainConfig(embedding_dim=8, num_groups=1, iterations=300,
                          lr=1e-3, batch_classes=2, samples_per_class=4, seed=0)
        result = run(cfg, fs)
        from metricboost.evaluate import evaluate_model

        report = evaluate_model(result.model, fs, ks=(1,))
        assert report.recall_at[1] == 1.0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_failure_carries_iteration(self):
        fs = _toy_set()
        cfg = TrainConfig(embedding_dim=8, num_groups=2, iterations=10,
                          lr=1e200, seed=0, batch_classes=3, samples_per_class=3)
        with pytest.raises(NumericFailure, match="iteration"):
            run(cfg, fs)

    def test_golden_metrics_csv(self, tmp_path):
        # Frozen reference produced by this implementation once; any change
        # to sampling, arithmetic order, or formatting shows up here.
        fs = synth_gaussian(SynthSpec(classes=6, per_class=6, feature_dim=12,
                                      cluster_spread=8.0, noise=1.0, seed=7))
        cfg = TrainConfig(embedding_dim=8, num_groups=2, iterations=2000,
                          eval_interval=500, lr=1e-3, batch_classes=3,
                          samples_per_class=3, seed=11)
        result = run(cfg, fs, metrics_path=tmp_path / "run.csv")
        golden = (DATA_DIR / "golden_metrics.csv").read_text()
        assert (tmp_path / "run.csv").read_text() == golden
        assert result.metrics_csv() == golden


class TestInitSolver:
    def test_activation_drives_norms_into_band(self):
        fs = synth_gaussian(SynthSpec(classes=5, per_class=8, feature_dim=16,
                                      cluster_spread=1.0, noise=0.1, seed=0))
        cfg = TrainConfig(embedding_dim=8, num_groups=2, seed=0)
        model, _ = build_model(cfg, fs.feature_dim, make_rng(0))
        res = init_solver(fs.features, model, "activation", lambda_w=100.0,
                          lr=1e-3, max_iterations=4000)
        assert res.norms_in_band
        assert res.final_div_term < res.initial_div_term

    def test_witness_is_fixed_point(self):
        # Block-orthogonal activations with unit columns: zero loss, zero grad.
        W = np.zeros((8, 4))
        W[0, 0] = W[1, 1] = 1.0
        W[4, 2] = W[5, 3] = 1.0
        from metricboost.ensemble import EnsembleModel, GroupPartition

        model = EnsembleModel(W.copy(), GroupPartition((2, 2)))
        X = np.zeros((4, 8))
        X[0, 0] = 1.0
        X[1, 1] = 2.0
        X[2, 4] = 1.0
        X[3, 5] = 2.0
        res = init_solver(X, model, "activation", lambda_w=10.0, lr=1e-2,
                          max_iterations=500)
        assert res.final_loss == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(model.W, W, atol=1e-12)

    @pytest.mark.filterwarnings("ignore::UserWarning")
    def test_suppression_decreases_over_first_100_iterations(self):
        # The suppression component is not per-iteration monotone while the
        # weight penalty reshapes W, but it must come down decisively over
        # the first 100 iterations (random 64-dim feature set, seed 0).
        fs = synth_gaussian(SynthSpec(classes=8, per_class=8, feature_dim=64,
                                      cluster_spread=1.0, noise=0.1, seed=0))
        cfg = TrainConfig(embedding_dim=16, num_groups=2, seed=0)
        model, _ = build_model(cfg, fs.feature_dim, make_rng(0))
        from metricboost.diversity import activation_loss

        before = activation_loss(model, fs.features, 100.0).sup_term
        init_solver(fs.features, model, "activation", lambda_w=100.0, lr=1e-3,
                    max_iterations=100)
        after = activation_loss(model, fs.features, 100.0).sup_term
        assert after < 0.5 * before

    @pytest.mark.filterwarnings("ignore::UserWarning")
    def test_adversarial_init_runs(self):
        fs = _toy_set(classes=4, per_class=4, h=10)
        cfg = TrainConfig(embedding_dim=6, num_groups=2, seed=1,
                          diversity="adversarial", regressor_hidden=5)
        rng = make_rng(1)
        model, bank = build_model(cfg, fs.feature_dim, rng)
        res = init_solver(fs.features, model, "adversarial", lambda_w=10.0,
                          lr=1e-4, max_iterations=200, bank=bank)
        assert np.isfinite(res.final_loss)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises(self):
        fs = _toy_set(classes=4, per_class=4, h=10)
        cfg = TrainConfig(embedding_dim=6, num_groups=2, seed=1)
        model, _ = build_model(cfg, fs.feature_dim, make_rng(1))
        with pytest.raises(NumericFailure):
            init_solver(fs.features, model, "activation", lambda_w=100.0,
                        lr=1e3, max_iterations=200)
