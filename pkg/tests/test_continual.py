"""Scenario builders, augmentation, and the training loop."""

import hashlib

import numpy as np
import pytest

from cssl.continual import (
    AugmentConfig,
    LabeledDataset,
    Scenario,
    TrainConfig,
    build_class_il,
    build_data_il,
    build_domain_il,
    domain_transforms,
    run_sequence,
    train_task,
    two_views,
)
from cssl.datastore import gen_synthetic
from cssl.errors import IndivisibleClasses, TooFewSamples
from cssl.losses import Method, PnrConfig, Regime
from cssl.model import snapshot_frozen, stack_bytes
from cssl.numerics import Rng


def toy_dataset(C=10, n_per=12, D=8, seed=5):
    rng = Rng(seed)
    x = rng.gaussian_matrix(C * n_per, D)
    y = np.repeat(np.arange(C), n_per)
    return LabeledDataset(x, y)


SMALL_MODEL = dict(encoder_dims=[8, 12, 6], projector_dims=[6, 6],
                   predictor_dims=[6, 6])


def small_cfg(**kw):
    base = dict(epochs_per_task=2, batch_size=16, lr=0.05, seed=1,
                loss=PnrConfig(method=Method.SIMCLR, regime=Regime.PNR),
                augment=AugmentConfig(0.2, 0.1, (0.8, 1.2)), **SMALL_MODEL)
    base.update(kw)
    return TrainConfig(**base)


class TestClassIl:
    def test_forced_partition(self):
        stream = build_class_il(toy_dataset(), 5)
        assert [sorted(t.label_set()) for t in stream.tasks] == [
            [0, 1], [2, 3], [4, 5], [6, 7], [8, 9]]

    def test_indivisible_raises(self):
        with pytest.raises(IndivisibleClasses):
            build_class_il(toy_dataset(), 3)

    def test_index_partition(self):
        ds = toy_dataset()
        stream = build_class_il(ds, 5)
        all_idx = np.concatenate([t.source_indices for t in stream.tasks])
        assert sorted(all_idx.tolist()) == list(range(ds.num_samples))


class TestDataIl:
    def test_equal_split(self):
        stream = build_data_il(toy_dataset(C=10, n_per=10), 5, seed=3)
        assert [t.num_samples for t in stream.tasks] == [20] * 5

    def test_deterministic(self):
        a = build_data_il(toy_dataset(), 5, seed=3)
        b = build_data_il(toy_dataset(), 5, seed=3)
        for ta, tb in zip(a.tasks, b.tasks):
            np.testing.assert_array_equal(ta.x, tb.x)

    def test_disjoint_coverage(self):
        ds = toy_dataset(C=7, n_per=13)
        stream = build_data_il(ds, 4, seed=9)
        all_idx = np.concatenate([t.source_indices for t in stream.tasks])
        assert sorted(all_idx.tolist()) == list(range(ds.num_samples))

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamples):
            build_data_il(toy_dataset(C=2, n_per=1), 5, seed=1)

    def test_healthy_splits_pass_soft_check_silently(self, caplog):
        import logging
        with caplog.at_level(logging.WARNING, logger="cssl.continual"):
            for seed in range(5):
                build_data_il(toy_dataset(C=5, n_per=40), 4, seed=seed)
        assert not any(">3 sigma" in rec.getMessage()
                       for rec in caplog.records)


class TestDomainIl:
    def test_task_one_is_base(self):
        ds = toy_dataset()
        stream = build_domain_il(ds, 3, seed=11)
        np.testing.assert_array_equal(stream.tasks[0].x, ds.x)
        np.testing.assert_array_equal(stream.tasks[0].y, ds.y)

    def test_rotations_orthogonal_and_norm_preserving(self):
        ds = toy_dataset()
        transforms = domain_transforms(ds, 4, seed=11)
        x = Rng(2).gaussian_matrix(5, ds.input_dim)
        for rot, _bias in transforms:
            gram = rot.T @ rot
            assert np.max(np.abs(gram - np.eye(ds.input_dim))) < 1e-10
            before = np.linalg.norm(x, axis=1)
            after = np.linalg.norm(x @ rot.T, axis=1)
            assert np.max(np.abs(before - after)) < 1e-12

    def test_labels_preserved(self):
        ds = toy_dataset()
        stream = build_domain_il(ds, 3, seed=11)
        for t in stream.tasks:
            assert t.label_set() == ds.label_set()
        assert [t.domain_id for t in stream.tasks] == [0, 1, 2]


class TestTwoViews:
    def test_identity_augmentation(self):
        x = Rng(1).gaussian_matrix(4, 6)
        cfg = AugmentConfig(0.0, 0.0, (1.0, 1.0))
        xa, xb = two_views(x, cfg, Rng(2))
        np.testing.assert_array_equal(xa, x)
        np.testing.assert_array_equal(xb, x)

    def test_deterministic_per_seed(self):
        x = Rng(1).gaussian_matrix(4, 6)
        cfg = AugmentConfig(0.3, 0.2, (0.7, 1.3))
        a1 = two_views(x, cfg, Rng(7))
        a2 = two_views(x, cfg, Rng(7))
        np.testing.assert_array_equal(a1[0], a2[0])
        np.testing.assert_array_equal(a1[1], a2[1])

    def test_views_differ(self):
        x = Rng(1).gaussian_matrix(4, 6)
        xa, xb = two_views(x, AugmentConfig(0.3, 0.0, (1.0, 1.0)), Rng(7))
        assert np.max(np.abs(xa - xb)) > 1e-6

    def test_full_dropout_zeroes_everything(self):
        x = Rng(1).gaussian_matrix(4, 6)
        xa, xb = two_views(x, AugmentConfig(0.0, 1.0, (1.0, 1.0)), Rng(7))
        assert np.all(xa == 0.0) and np.all(xb == 0.0)


class TestTrainTask:
    def test_lr_zero_fixed_point_and_constant_trace(self):
        task = build_class_il(toy_dataset(), 5).tasks[0]
        stack_cfg = small_cfg(lr=0.0, epochs_per_task=3)
        from cssl.model import init_stack
        stack = init_stack(Rng(1), SMALL_MODEL["encoder_dims"],
                           SMALL_MODEL["projector_dims"],
                           SMALL_MODEL["predictor_dims"])
        before = stack_bytes(stack)
        stack, log = train_task(stack, None, task, stack_cfg)
        assert stack_bytes(stack) == before
        assert len(set(log.epoch_losses)) == 1

    def test_deterministic_repeat(self):
        task = build_class_il(toy_dataset(), 5).tasks[0]
        from cssl.model import init_stack

        def run():
            stack = init_stack(Rng(3), SMALL_MODEL["encoder_dims"],
                               SMALL_MODEL["projector_dims"],
                               SMALL_MODEL["predictor_dims"])
            return train_task(stack, None, task,
                              small_cfg(epochs_per_task=1,
                                        batch_size=task.num_samples))

        s1, l1 = run()
        s2, l2 = run()
        assert stack_bytes(s1) == stack_bytes(s2)
        assert l1.epoch_losses == l2.epoch_losses

    def test_frozen_model_untouched(self):
        stream = build_class_il(toy_dataset(), 5)
        from cssl.model import init_stack
        stack = init_stack(Rng(4), SMALL_MODEL["encoder_dims"],
                           SMALL_MODEL["projector_dims"],
                           SMALL_MODEL["predictor_dims"])
        stack, _ = train_task(stack, None, stream.tasks[0], small_cfg())
        frozen = snapshot_frozen(stack)
        digest = hashlib.sha256(stack_bytes(frozen)).hexdigest()
        stack, _ = train_task(stack, frozen, stream.tasks[1], small_cfg(),
                              task_index=2)
        assert hashlib.sha256(stack_bytes(frozen)).hexdigest() == digest

    def test_ft_loss_decreases_on_toy_clusters(self):
        # two well-separated clusters; SimCLR fine-tuning should descend
        for seed in (1, 2, 3):
            ds = gen_synthetic(2, 8, 24, 1.0, 0.3, seed=seed)
            task = LabeledDataset(ds.x, ds.y)
            cfg = small_cfg(epochs_per_task=50, lr=0.05, seed=seed,
                            loss=PnrConfig(method=Method.SIMCLR,
                                           regime=Regime.FT),
                            encoder_dims=[8, 12, 6], batch_size=16)
            from cssl.model import init_stack
            stack = init_stack(Rng(seed + 10), [8, 12, 6], [6, 6], [6, 6])
            _, log = train_task(stack, None, task, cfg)
            assert log.epoch_losses[-1] < log.epoch_losses[0]

    @pytest.mark.parametrize("method", [Method.MOCO, Method.BYOL,
                                        Method.VICREG, Method.BARLOW])
    def test_all_methods_run_two_tasks(self, method):
        stream = build_class_il(toy_dataset(), 5)
        # VICReg/Barlow losses carry much larger coefficients; scale lr down
        lr = {Method.VICREG: 0.002, Method.BARLOW: 0.01}.get(method, 0.05)
        cfg = small_cfg(loss=PnrConfig(method=method, regime=Regime.PNR),
                        queue_capacity=32, lr=lr)
        from cssl.model import init_stack
        stack = init_stack(Rng(5), SMALL_MODEL["encoder_dims"],
                           SMALL_MODEL["projector_dims"],
                           SMALL_MODEL["predictor_dims"])
        stack, log1 = train_task(stack, None, stream.tasks[0], cfg)
        frozen = snapshot_frozen(stack)
        stack, log2 = train_task(stack, frozen, stream.tasks[1], cfg,
                                 task_index=2)
        assert all(np.isfinite(v) for v in log1.epoch_losses + log2.epoch_losses)


class TestRunSequence:
    def test_checkpoint_counts(self):
        stream = build_class_il(toy_dataset(), 5)
        res = run_sequence(stream, small_cfg(epochs_per_task=1))
        assert len(res.checkpoints) == 5
        assert len(res.ft_checkpoints) == 5

    def test_single_task_equals_ft_train(self):
        stream = build_class_il(toy_dataset(C=2, n_per=10), 1)
        cfg = small_cfg(epochs_per_task=2)
        res = run_sequence(stream, cfg, with_ft_refs=False)
        from cssl.model import init_stack
        stack = init_stack(Rng(cfg.seed).derive("init"),
                           cfg.encoder_dims, cfg.projector_dims,
                           cfg.predictor_dims)
        stack, _ = train_task(stack, None, stream.tasks[0], cfg, task_index=1)
        assert stack_bytes(res.checkpoints[0]) == stack_bytes(stack)

    def test_pnr_forced_empty_replays_cassle_bitwise(self):
        stream = build_class_il(toy_dataset(), 5)
        cfg_a = small_cfg(loss=PnrConfig(method=Method.SIMCLR,
                                         regime=Regime.PNR,
                                         include_pseudo_negatives=False))
        cfg_b = small_cfg(loss=PnrConfig(method=Method.SIMCLR,
                                         regime=Regime.CASSLE))
        res_a = run_sequence(stream, cfg_a, with_ft_refs=False)
        res_b = run_sequence(stream, cfg_b, with_ft_refs=False)
        for ca, cb in zip(res_a.checkpoints, res_b.checkpoints):
            assert stack_bytes(ca) == stack_bytes(cb)

    def test_byol_lambda_zero_replays_cassle_bitwise(self):
        stream = build_class_il(toy_dataset(), 5)
        cfg_a = small_cfg(loss=PnrConfig(method=Method.BYOL,
                                         regime=Regime.PNR, lambda_pnr=0.0))
        cfg_b = small_cfg(loss=PnrConfig(method=Method.BYOL,
                                         regime=Regime.CASSLE))
        res_a = run_sequence(stream, cfg_a, with_ft_refs=False)
        res_b = run_sequence(stream, cfg_b, with_ft_refs=False)
        for ca, cb in zip(res_a.checkpoints, res_b.checkpoints):
            assert stack_bytes(ca) == stack_bytes(cb)

    def test_full_sequence_deterministic(self):
        stream = build_class_il(toy_dataset(), 5)
        cfg = small_cfg(epochs_per_task=1)
        a = run_sequence(stream, cfg)
        b = run_sequence(stream, cfg)
        for ca, cb in zip(a.checkpoints + a.ft_checkpoints,
                          b.checkpoints + b.ft_checkpoints):
            assert stack_bytes(ca) == stack_bytes(cb)


class TestStreamValidation:
    def test_class_il_rejects_overlap(self):
        ds = toy_dataset()
        t1 = LabeledDataset(ds.x[:20], ds.y[:20])
        with pytest.raises(ValueError):
            from cssl.continual import TaskStream
            TaskStream(Scenario.CLASS_IL, [t1, t1])
