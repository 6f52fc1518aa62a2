import math

import numpy as np
import pytest

from dpselect import models, trainer
from dpselect.data import LabeledDataset, gen_gaussian_outlier, gen_mixture
from dpselect.data import MixtureComponent, MixtureSpec
from dpselect.losses import cross_entropy_loss, sat_loss, selectivenet_loss
from dpselect.models import ModelSpec, init_params, predict
from dpselect.trainer import (
    CheckpointLog,
    PrivacyConfig,
    TrainConfig,
    clip_rows,
    dpsgd_step,
    eval_set_id,
    load_checkpoint_log,
    poisson_sample,
    save_checkpoint_log,
    sgd_step,
    steps_per_epoch,
    train,
)


def two_blob_data(n_per=40, seed=0):
    spec = MixtureSpec(
        (
            MixtureComponent((-1.5, 0.0), 1.0, n_per, 0),
            MixtureComponent((1.5, 0.0), 1.0, n_per, 1),
        )
    )
    return gen_mixture(spec, seed)


class TestPrimitives:
    def test_clip_rescales_long_rows(self):
        rows = np.array([[3.0, 4.0], [0.3, 0.4]])
        out = clip_rows(rows, 2.5)
        np.testing.assert_allclose(out[0], [1.5, 2.0], atol=1e-15)
        np.testing.assert_array_equal(out[1], rows[1])

    def test_clip_infinite_is_noop(self):
        rows = np.array([[30.0, 40.0]])
        np.testing.assert_array_equal(clip_rows(rows, math.inf), rows)

    def test_clip_zero_row_safe(self):
        np.testing.assert_array_equal(clip_rows(np.zeros((1, 3)), 1.0), np.zeros((1, 3)))

    def test_poisson_sample_deterministic(self):
        a = poisson_sample(100, 0.1, seed=4, step=7)
        b = poisson_sample(100, 0.1, seed=4, step=7)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, poisson_sample(100, 0.1, seed=4, step=8))

    def test_poisson_sample_full_rate(self):
        np.testing.assert_array_equal(poisson_sample(10, 1.0, 0, 1), np.arange(10))

    def test_poisson_sample_rate(self):
        sizes = [len(poisson_sample(1000, 0.05, 0, t)) for t in range(200)]
        assert np.mean(sizes) == pytest.approx(50, rel=0.1)

    def test_steps_per_epoch(self):
        assert steps_per_epoch(0.05) == 20
        assert steps_per_epoch(1.0) == 1
        assert steps_per_epoch(0.7) == 1


class TestStepEquivalence:
    def test_dpsgd_degenerates_to_sgd(self):
        data = two_blob_data()
        spec = ModelSpec(input_dim=2, num_classes=2, hidden_sizes=(6,))
        a = init_params(spec, seed=1)
        b = init_params(spec, seed=1)
        loss = cross_entropy_loss()
        for t in range(1, 51):
            idx = poisson_sample(len(data), 0.2, seed=2, step=t)
            x, y = data.features[idx], data.labels[idx]
            a = dpsgd_step(a, spec, x, y, loss, clip_norm=1e9, sigma=0.0,
                           learning_rate=0.3, noise_seed=t)
            b = sgd_step(b, spec, x, y, loss, learning_rate=0.3)
        assert np.max(np.abs(a.values - b.values)) < 1e-9

    def test_empty_batch_still_noises(self):
        spec = ModelSpec(input_dim=2, num_classes=2)
        params = init_params(spec, seed=1)
        x = np.zeros((0, 2))
        y = np.zeros(0, dtype=int)
        out = dpsgd_step(params, spec, x, y, cross_entropy_loss(), clip_norm=1.0,
                         sigma=1.0, learning_rate=0.5, noise_seed=3)
        assert not np.array_equal(out.values, params.values)
        quiet = sgd_step(params, spec, x, y, cross_entropy_loss(), learning_rate=0.5)
        np.testing.assert_array_equal(quiet.values, params.values)

    def test_noise_requires_finite_clip(self):
        spec = ModelSpec(input_dim=2, num_classes=2)
        params = init_params(spec, seed=1)
        with pytest.raises(ValueError):
            dpsgd_step(params, spec, np.zeros((1, 2)), np.zeros(1, dtype=int),
                       cross_entropy_loss(), clip_norm=math.inf, sigma=1.0,
                       learning_rate=0.1, noise_seed=0)


class TestTrain:
    def test_checkpoint_schedule(self):
        data = two_blob_data()
        spec = ModelSpec(input_dim=2, num_classes=2)
        cfg = TrainConfig(learning_rate=0.5, steps=25, loss=cross_entropy_loss(),
                          checkpoint_interval=10, seed=3)
        result = train(data, spec, cfg, PrivacyConfig.non_private(25, 0.5))
        np.testing.assert_array_equal(result.log.checkpoint_times, [10, 20, 25])

    def test_zero_steps_logs_initial_model(self):
        data = two_blob_data()
        spec = ModelSpec(input_dim=2, num_classes=2)
        cfg = TrainConfig(learning_rate=0.5, steps=0, loss=cross_entropy_loss(), seed=3)
        result = train(data, spec, cfg, PrivacyConfig.non_private(0, 0.5))
        np.testing.assert_array_equal(result.log.checkpoint_times, [0])
        np.testing.assert_array_equal(result.params.values, init_params(spec, 3).values)

    def test_final_row_matches_returned_params(self):
        data = two_blob_data()
        eval_set = two_blob_data(seed=9)
        spec = ModelSpec(input_dim=2, num_classes=2, hidden_sizes=(4,))
        cfg = TrainConfig(learning_rate=0.5, steps=30, loss=cross_entropy_loss(),
                          checkpoint_interval=7, seed=3)
        result = train(data, spec, cfg, PrivacyConfig.non_private(30, 0.2), eval_set)
        np.testing.assert_array_equal(
            result.log.predictions[-1], predict(result.params, spec, eval_set.features)
        )
        assert result.log.eval_set_id == eval_set_id(eval_set)

    def test_horizon_mismatch_rejected(self):
        data = two_blob_data()
        spec = ModelSpec(input_dim=2, num_classes=2)
        cfg = TrainConfig(learning_rate=0.5, steps=10, loss=cross_entropy_loss(),
                          checkpoint_interval=10, seed=0)
        with pytest.raises(ValueError, match="horizon"):
            train(data, spec, cfg, PrivacyConfig.non_private(20, 0.5))

    def test_insufficient_noise_rejected(self):
        data = two_blob_data()
        spec = ModelSpec(input_dim=2, num_classes=2)
        cfg = TrainConfig(learning_rate=0.5, steps=10, loss=cross_entropy_loss(),
                          checkpoint_interval=10, seed=0)
        privacy = PrivacyConfig(epsilon=0.5, delta=1e-3, clip_norm=1.0,
                                sampling_rate=0.5, steps=10, noise_multiplier=0.4)
        with pytest.raises(ValueError, match="exceeds target"):
            train(data, spec, cfg, privacy)

    def test_private_run_reports_calibrated_budget(self):
        data = two_blob_data()
        spec = ModelSpec(input_dim=2, num_classes=2)
        cfg = TrainConfig(learning_rate=0.5, steps=20, loss=cross_entropy_loss(),
                          checkpoint_interval=20, seed=0)
        privacy = PrivacyConfig(epsilon=3.0, delta=1e-3, clip_norm=1.0,
                                sampling_rate=0.2, steps=20)
        result = train(data, spec, cfg, privacy)
        assert 0.999 * 3.0 <= result.report.epsilon <= 3.0
        assert result.report.sigma > 0

    def test_non_private_report(self):
        data = two_blob_data()
        spec = ModelSpec(input_dim=2, num_classes=2)
        cfg = TrainConfig(learning_rate=0.5, steps=5, loss=cross_entropy_loss(),
                          checkpoint_interval=5, seed=0)
        report = train(data, spec, cfg, PrivacyConfig.non_private(5, 0.5)).report
        assert report.epsilon == math.inf and report.sigma == 0.0

    def test_reproducible_end_to_end(self):
        data = gen_gaussian_outlier(60, [6.0, 0.0], seed=2)
        spec = ModelSpec(input_dim=2, num_classes=2)
        cfg = TrainConfig(learning_rate=0.5, steps=15, loss=cross_entropy_loss(),
                          checkpoint_interval=15, seed=5)
        privacy = PrivacyConfig(epsilon=3.0, delta=1e-2, clip_norm=1.0,
                                sampling_rate=0.2, steps=15)
        a = train(data, spec, cfg, privacy)
        b = train(data, spec, cfg, privacy)
        np.testing.assert_array_equal(a.params.values, b.params.values)

    def test_sat_training_emits_wide_simplex(self):
        data = two_blob_data()
        spec = ModelSpec(input_dim=2, num_classes=2, abstention_head=True)
        cfg = TrainConfig(learning_rate=0.5, steps=20, loss=sat_loss(burn_in_epochs=1),
                          checkpoint_interval=10, seed=1)
        result = train(data, spec, cfg, PrivacyConfig.non_private(20, 0.2))
        assert result.log.final_probs.shape == (len(data), 3)
        np.testing.assert_allclose(result.log.final_probs.sum(axis=1), 1.0, atol=1e-9)
        assert result.log.predictions.max() <= 1  # argmax over real classes only

    def test_selectivenet_training_logs_selection(self):
        data = two_blob_data()
        spec = ModelSpec(input_dim=2, num_classes=2, hidden_sizes=(4,),
                         selectivenet_heads=True)
        cfg = TrainConfig(learning_rate=0.3, steps=20, loss=selectivenet_loss(0.5),
                          checkpoint_interval=10, seed=1)
        result = train(data, spec, cfg, PrivacyConfig.non_private(20, 0.2))
        assert result.log.final_selection is not None
        assert result.log.final_selection.shape == (len(data),)

    def test_dropout_training_runs(self):
        data = two_blob_data()
        spec = ModelSpec(input_dim=2, num_classes=2, hidden_sizes=(4,),
                         dropout_rate=0.2)
        cfg = TrainConfig(learning_rate=0.3, steps=10, loss=cross_entropy_loss(),
                          checkpoint_interval=5, seed=1)
        result = train(data, spec, cfg, PrivacyConfig.non_private(10, 0.3))
        assert np.all(np.isfinite(result.params.values))


class TestLogPersistence:
    def test_round_trip_bitwise(self, tmp_path):
        data = two_blob_data()
        spec = ModelSpec(input_dim=2, num_classes=2, selectivenet_heads=True)
        cfg = TrainConfig(learning_rate=0.3, steps=10, loss=selectivenet_loss(0.5),
                          checkpoint_interval=5, seed=1)
        log = train(data, spec, cfg, PrivacyConfig.non_private(10, 0.3)).log
        save_checkpoint_log(log, tmp_path / "log")
        loaded = load_checkpoint_log(tmp_path / "log")
        np.testing.assert_array_equal(loaded.checkpoint_times, log.checkpoint_times)
        np.testing.assert_array_equal(loaded.predictions, log.predictions)
        np.testing.assert_array_equal(loaded.final_probs, log.final_probs)
        np.testing.assert_array_equal(loaded.final_selection, log.final_selection)
        assert loaded.eval_set_id == log.eval_set_id

    def test_rejects_foreign_directory(self, tmp_path):
        (tmp_path / "log.json").write_text("{}")
        with pytest.raises(ValueError):
            load_checkpoint_log(tmp_path)

    def test_log_validation(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            CheckpointLog(
                checkpoint_times=np.array([5, 5]),
                predictions=np.zeros((2, 3), dtype=int),
                final_probs=np.full((3, 2), 0.5),
                eval_set_id="x",
            )

    def test_eval_set_id_distinguishes_data(self):
        assert eval_set_id(two_blob_data(seed=0)) != eval_set_id(two_blob_data(seed=1))
