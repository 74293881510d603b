import numpy as np
import pytest
from numpy.testing import assert_array_equal

from prototex.data import generate_synthetic
from prototex.errors import ConfigError
from prototex.losses import SimpleLoss, backward, evaluate_loss
from prototex.model import init_head
from prototex.optim import AdamW
from prototex.train import (
    TrainConfig,
    TrainData,
    run_training,
    train_interleaved,
    train_simple,
)


def tiny_data(seed=0, n=120, D=6):
    ds, emb = generate_synthetic(n, D, signal_dims=3, n_clusters=2, rng=seed)
    return TrainData.from_dataset(ds, emb)


def make_config(**overrides):
    base = dict(algorithm="interleaved", m=6, k=2, lr=0.01, batch_size=10, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


class TestTrainConfig:
    def test_unknown_algorithm_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(algorithm="magic")

    def test_prototypes_fewer_than_classes_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(m=1)

    def test_negative_count_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(k=-1)

    def test_defaults_follow_reference_configuration(self):
        config = TrainConfig()
        assert (config.m, config.neg_count) == (20, 1)
        assert (config.lambda1, config.lambda2) == (0.9, 0.9)
        assert (config.lambda_interleaved, config.delta, config.gamma) == (50.0, 3, 2)
        assert (config.lr, config.batch_size) == (0.01, 20)
        assert config.projection_lr_scale == 0.2
        assert config.normalize is True
        # budget: k outer iterations of delta + gamma epochs stay within 200
        assert config.k * (config.delta + config.gamma) <= 200


class TestTrainSimple:
    def test_zero_iterations_leave_head_unchanged(self):
        data = tiny_data()
        config = make_config(algorithm="simple", k=0, embed_dim=6)
        head = init_head(config, 0)
        before = head.copy()
        final, report = train_simple(head, data, config)
        assert_array_equal(final.prototypes, before.prototypes)
        assert report.epochs_run == 0

    def test_single_step_descends_on_fixed_batch(self):
        data = tiny_data()
        config = make_config(algorithm="simple", embed_dim=6)
        head = init_head(config, 3)
        X = data.train_x[:16]
        y = data.train_y[:16]
        mode = SimpleLoss()
        before = evaluate_loss(head, X, y, mode).total
        opt = AdamW(lr=1e-4, weight_decay=0.0)
        opt.register("projection", head.projection)
        opt.register("prototypes", head.prototypes)
        opt.register("linear", head.linear_weights)
        _, grads = backward(head, X, y, mode)
        opt.step(
            {
                "projection": (head.projection, grads.d_projection),
                "prototypes": (head.prototypes, grads.d_prototypes),
                "linear": (head.linear_weights, grads.d_linear),
            }
        )
        after = evaluate_loss(head, X, y, mode).total
        assert after < before

    def test_wrong_algorithm_rejected(self):
        data = tiny_data()
        config = make_config(algorithm="interleaved", embed_dim=6)
        head = init_head(config, 0)
        with pytest.raises(ConfigError):
            train_simple(head, data, config)

    def test_report_lengths_consistent(self):
        data = tiny_data()
        config = make_config(algorithm="simple", k=3, embed_dim=6)
        head = init_head(config, 1)
        _, report = train_simple(head, data, config)
        assert report.epochs_run == 3
        assert len(report.loss_trace) == 3
        assert len(report.val_f1) == 3


class TestTrainInterleaved:
    def test_zero_iterations_leave_head_unchanged(self):
        data = tiny_data()
        config = make_config(k=0, embed_dim=6)
        head = init_head(config, 0)
        before = head.copy()
        final, _ = train_interleaved(head, data, config)
        assert_array_equal(final.prototypes, before.prototypes)

    def test_requires_negative_prototype(self):
        data = tiny_data()
        config = make_config(neg_count=0, embed_dim=6)
        head = init_head(config, 0)
        with pytest.raises(ConfigError):
            train_interleaved(head, data, config)

    def test_delta_epoch_touches_only_selected_class_rows(self):
        data = tiny_data()
        # delta only, starting class positive: class-0 rows must not move
        config = make_config(k=1, delta=1, gamma=0, embed_dim=6)
        head = init_head(config, 2)
        before = head.copy()
        train_interleaved(head, data, config)
        pos_rows = head.class_rows(1)
        neg_rows = head.class_rows(0)
        assert_array_equal(head.prototypes[neg_rows], before.prototypes[neg_rows])
        assert np.any(head.prototypes[pos_rows] != before.prototypes[pos_rows])
        assert_array_equal(head.projection, before.projection)
        assert_array_equal(head.linear_weights, before.linear_weights)

    def test_gamma_epoch_never_moves_prototypes(self):
        data = tiny_data()
        config = make_config(k=1, delta=0, gamma=2, embed_dim=6)
        head = init_head(config, 2)
        before = head.copy()
        train_interleaved(head, data, config)
        assert_array_equal(head.prototypes, before.prototypes)
        assert np.any(head.projection != before.projection)
        assert np.any(head.linear_weights != before.linear_weights)

    def test_delta_two_reaches_negative_class(self):
        data = tiny_data()
        config = make_config(k=1, delta=2, gamma=0, embed_dim=6)
        head = init_head(config, 4)
        before = head.copy()
        train_interleaved(head, data, config)
        neg_rows = head.class_rows(0)
        assert np.any(head.prototypes[neg_rows] != before.prototypes[neg_rows])

    def test_same_seed_identical_loss_trace(self):
        data = tiny_data()
        config = make_config(k=3, embed_dim=6)
        _, report_a = train_interleaved(init_head(config, 0), data, config)
        _, report_b = train_interleaved(init_head(config, 0), data, config)
        assert report_a.loss_trace == report_b.loss_trace
        assert report_a.val_f1 == report_b.val_f1

    def test_normalization_flag_changes_trace(self):
        data = tiny_data()
        config_on = make_config(k=2, embed_dim=6, normalize=True)
        config_off = make_config(k=2, embed_dim=6, normalize=False)
        _, report_on = train_interleaved(init_head(config_on, 0), data, config_on)
        _, report_off = train_interleaved(init_head(config_off, 0), data, config_off)
        assert report_on.loss_trace != report_off.loss_trace

    def test_epochs_run_counts_inner_epochs(self):
        data = tiny_data()
        config = make_config(k=2, delta=2, gamma=1, embed_dim=6)
        _, report = train_interleaved(init_head(config, 0), data, config)
        assert report.epochs_run == 2 * (2 + 1)
        assert len(report.val_f1) == 2


class TestRunTraining:
    def test_resolves_dimensions_from_data(self):
        data = tiny_data()
        final, report = run_training(data, make_config(k=1))
        assert final.embed_dim == 6
        assert len(report.val_f1) == 1

    def test_dimension_conflict_rejected(self):
        data = tiny_data()
        with pytest.raises(ConfigError):
            run_training(data, make_config(embed_dim=9))
