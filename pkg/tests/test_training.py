import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wdncnn.errors import DomainError
from wdncnn.model import WDnCNNConfig, build_model
from wdncnn.training import (
    BDTSchedule,
    TrainConfig,
    TrainingState,
    add_awgn,
    augment,
    bdt_weights,
    epoch_batches,
    inverse_augment_op,
    learning_rate,
    log_row,
    make_training_pair,
    pretrain_converged,
    run_training,
    sample_patches,
    train_epoch,
)
from wdncnn.wavelet import load_filterbank

# weight table for fine-tuning, one row per 50-epoch block
TABLE = [
    ((1, 50), (2.0, 2.5, 2.5, 4.5)),
    ((50, 100), (3.5, 2.5, 2.5, 3.0)),
    ((100, 150), (4.5, 2.5, 2.5, 2.0)),
    ((150, 200), (5.5, 1.5, 1.5, 1.0)),
    ((200, 250), (6.0, 2.0, 2.0, 1.5)),
    ((250, 300), (6.5, 2.5, 2.5, 2.0)),
    ((300, 350), (7.0, 3.0, 3.0, 2.5)),
    ((350, 400), (7.5, 3.5, 3.5, 3.0)),
    ((400, 450), (8.0, 4.0, 4.0, 3.5)),
    ((450, 500), (8.5, 4.5, 4.5, 4.0)),
]

MINI = WDnCNNConfig.miniature()
HAAR = load_filterbank("haar")


def tiny_config(**kw):
    base = dict(patch_size=16, patches_per_epoch=8, batch_size=4, sigma_min=0.0, sigma_max=75.0, lr_initial=1e-3, lr_final=1e-5)
    base.update(kw)
    return TrainConfig(**base)


class TestSchedule:
    def test_pretrain(self):
        assert bdt_weights(1, BDTSchedule(), "pretrain") == (1.5, 2.5, 2.5, 5.0)
        assert bdt_weights(999, BDTSchedule(), "pretrain") == (1.5, 2.5, 2.5, 5.0)

    def test_examples(self):
        assert bdt_weights(25, BDTSchedule(), "finetune") == (2.0, 2.5, 2.5, 4.5)
        assert bdt_weights(480, BDTSchedule(), "finetune") == (8.5, 4.5, 4.5, 4.0)

    def test_every_block_interior(self):
        s = BDTSchedule()
        for (lo, hi), mu in TABLE:
            for e in range(lo + 1, hi):
                assert bdt_weights(e, s, "finetune") == mu

    def test_boundaries_go_to_later_block(self):
        s = BDTSchedule()
        for i in range(1, 10):
            assert bdt_weights(50 * i, s, "finetune") == TABLE[i][1]
        assert bdt_weights(1, s, "finetune") == TABLE[0][1]
        assert bdt_weights(49, s, "finetune") == TABLE[0][1]

    def test_epoch_500_and_past(self):
        s = BDTSchedule()
        assert bdt_weights(500, s, "finetune") == TABLE[-1][1]
        assert bdt_weights(750, s, "finetune") == TABLE[-1][1]

    def test_lh_equals_hl(self):
        s = BDTSchedule()
        for e in range(1, 501):
            mu = bdt_weights(e, s, "finetune")
            assert mu[1] == mu[2] and min(mu) > 0

    def test_block_ranges_printed_form(self):
        assert BDTSchedule().block_ranges() == [r for r, _ in TABLE]

    def test_bad_inputs(self):
        with pytest.raises(DomainError):
            bdt_weights(0, BDTSchedule(), "finetune")
        with pytest.raises(DomainError):
            bdt_weights(3, BDTSchedule(), "warmup")
        with pytest.raises(DomainError):
            BDTSchedule(block_weights=((1.0, 1.0, 0.0, 1.0),))

    def test_learning_rate(self):
        cfg, s = TrainConfig(), BDTSchedule()
        assert learning_rate(7, cfg, s, "pretrain") == 1e-4
        assert learning_rate(1, cfg, s, "finetune") == pytest.approx(1e-4, rel=1e-12)
        assert learning_rate(499, cfg, s, "finetune") == pytest.approx(1e-7, rel=1e-12)
        lrs = [learning_rate(50 * b + 1, cfg, s, "finetune") for b in range(10)]
        ratios = np.array(lrs[1:]) / np.array(lrs[:-1])
        np.testing.assert_allclose(ratios, 10 ** (-1 / 3), rtol=1e-12)
        assert learning_rate(60, cfg, s, "finetune") == learning_rate(99, cfg, s, "finetune")


class TestPatches:
    def test_count_zero(self, train_images):
        assert sample_patches(train_images, 0, 50, 1) == []

    def test_single_valid_corner(self, rng):
        img = rng.uniform(0, 1, (1, 50, 50))
        for p in sample_patches([img], 5, 50, 3):
            np.testing.assert_array_equal(p, img)

    def test_seeded(self, train_images):
        a = sample_patches(train_images, 10, 50, 7)
        b = sample_patches(train_images, 10, 50, 7)
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))
        c = sample_patches(train_images, 10, 50, 8)
        assert any(x.tobytes() != y.tobytes() for x, y in zip(a, c))

    def test_prefix_stable(self, train_images):
        # patch i depends on (seed, i) only, so a longer draw extends a shorter one
        a = sample_patches(train_images, 4, 32, 2)
        b = sample_patches(train_images, 9, 32, 2)
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))

    def test_patches_are_crops(self, rng):
        img = rng.uniform(0, 1, (1, 60, 70))
        for p in sample_patches([img], 20, 16, 4):
            hits = [
                (t, l)
                for t in range(45)
                for l in range(55)
                if np.array_equal(img[:, t : t + 16, l : l + 16], p)
            ]
            assert len(hits) == 1

    def test_small_images_skipped(self, rng, caplog):
        big = rng.uniform(0, 1, (1, 40, 40))
        small = rng.uniform(0, 1, (1, 10, 10))
        patches = sample_patches([small, big], 5, 20, 0)
        assert len(patches) == 5 and all(p.shape == (1, 20, 20) for p in patches)
        assert "skipping" in caplog.text

    def test_empty(self):
        with pytest.raises(DomainError):
            sample_patches([], 3, 10, 0)
        with pytest.raises(DomainError):
            sample_patches([np.zeros((1, 5, 5))], 3, 10, 0)


class TestNoise:
    def test_zero_sigma(self, rng):
        x = rng.uniform(0, 1, (1, 8, 8))
        np.testing.assert_array_equal(add_awgn(x, 0.0, 1), x)

    def test_statistics(self):
        x = np.full((1, 1000, 1000), 0.5)
        n = add_awgn(x, 25.0, 11) - x
        target = 25.0 / 255.0
        assert abs(n.std() / target - 1) < 0.01
        assert abs(n.mean()) < 3 * target / math.sqrt(n.size)

    def test_not_clipped(self):
        y = add_awgn(np.zeros((1, 64, 64)), 75.0, 0)
        assert y.min() < 0.0

    def test_range(self):
        with pytest.raises(DomainError):
            add_awgn(np.zeros((2, 2)), 76.0, 0)

    def test_seeded(self, rng):
        x = rng.uniform(0, 1, (1, 8, 8))
        assert add_awgn(x, 10.0, 5).tobytes() == add_awgn(x, 10.0, 5).tobytes()


class TestAugment:
    def test_identity(self, rng):
        x = rng.standard_normal((1, 5, 5))
        np.testing.assert_array_equal(augment(x, 0), x)

    def test_eight_distinct(self, rng):
        x = rng.standard_normal((1, 4, 4))
        assert len({augment(x, k).tobytes() for k in range(8)}) == 8

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 7), st.integers(0, 2**32 - 1))
    def test_inverse_and_permutation(self, op, seed):
        x = np.random.default_rng(seed).standard_normal((2, 6, 6))
        y = augment(x, op)
        np.testing.assert_array_equal(augment(y, inverse_augment_op(op)), x)
        np.testing.assert_array_equal(np.sort(y, axis=None), np.sort(x, axis=None))
        assert np.sum(y * y) == pytest.approx(np.sum(x * x), rel=1e-14)

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            augment(np.zeros((2, 2)), 8)


class TestTrainingPair:
    def test_zero_sigma(self, rng):
        u, target, sig = make_training_pair(rng.uniform(0, 1, (1, 16, 16)), 0.0, HAAR, 1)
        assert sig == 0.0
        assert not any(b.any() for b in target.bands())

    def test_target_energy_is_noise_energy(self, rng):
        clean = rng.uniform(0, 1, (1, 32, 32))
        u, target, _ = make_training_pair(clean, 30.0, HAAR, 3)
        noise = add_awgn(clean, 30.0, 3) - clean
        assert target.energy() == pytest.approx(np.sum(noise * noise), rel=1e-12)

    def test_u_minus_target_is_clean(self, rng):
        from wdncnn.wavelet import dwt2

        clean = rng.uniform(0, 1, (1, 20, 20))
        u, target, sig = make_training_pair(clean, 40.0, HAAR, 9)
        assert sig == 40.0 / 255.0
        w = dwt2(clean, HAAR)
        for a, b in zip((u - target).bands(), w.bands()):
            np.testing.assert_allclose(a, b, atol=1e-15, rtol=0)


class TestTrainLoop:
    def test_batches_pure_function_of_index(self, train_images):
        a = list(epoch_batches(train_images, HAAR, tiny_config(batch_size=4), 3, "pretrain"))
        b = list(epoch_batches(train_images, HAAR, tiny_config(batch_size=8), 3, "pretrain"))
        joined = np.concatenate([a[0][0].ll, a[1][0].ll])
        np.testing.assert_array_equal(joined, b[0][0].ll)
        np.testing.assert_array_equal(np.concatenate([a[0][2], a[1][2]]), b[0][2])

    def test_batches_sigma_range(self, train_images):
        sig = np.concatenate([s for _, _, s in epoch_batches(train_images, HAAR, tiny_config(sigma_min=10.0, sigma_max=20.0, patches_per_epoch=40), 1, "pretrain")])
        assert sig.min() >= 10 / 255 and sig.max() <= 20 / 255

    def test_lr_zero_keeps_parameters(self, train_images):
        params = build_model(MINI, 0)
        before = params.digest()
        cfg = tiny_config(lr_initial=0.0, lr_final=0.0)
        stats = train_epoch(params, train_images, HAAR, cfg, BDTSchedule(), 1, "pretrain")
        assert params.digest() == before
        assert math.isfinite(stats.loss_total) and stats.loss_total > 0

    def test_deterministic(self, train_images):
        cfg = tiny_config()
        runs = []
        for _ in range(2):
            params = build_model(MINI, 1)
            stats = train_epoch(params, train_images, HAAR, cfg, BDTSchedule(), 2, "finetune")
            runs.append((stats, params.digest()))
        assert runs[0] == runs[1]

    def test_stats_fields(self, train_images):
        params = build_model(MINI, 1)
        stats = train_epoch(params, train_images, HAAR, tiny_config(), BDTSchedule(), 60, "finetune")
        assert stats.mu == (3.5, 2.5, 2.5, 3.0)
        # the weighted loss is the weight-averaged band loss, divided by K = 4
        expected = sum(m * l for m, l in zip(stats.mu, stats.loss_bands)) / 4
        assert stats.loss_total == pytest.approx(expected, rel=1e-6)
        row = log_row(stats)
        assert row[0] == "60" and row[1] == "finetune" and float(row[7]) == stats.loss_total

    def test_uniform_weights_when_bdt_off(self, train_images):
        stats = train_epoch(build_model(MINI, 1), train_images, HAAR, tiny_config(use_bdt=False), BDTSchedule(), 1, "pretrain")
        assert stats.mu == (1.0, 1.0, 1.0, 1.0)

    def test_loss_decreases_desk_scale(self, train_images):
        cfg = TrainConfig(
            patch_size=50, patches_per_epoch=200, batch_size=4, sigma_min=25.0, sigma_max=25.0,
            lr_initial=1e-3, lr_final=1e-3, augment=False, resample_each_epoch=False, seed=0,
        )
        params = build_model(MINI, 0)
        losses = [train_epoch(params, train_images, HAAR, cfg, BDTSchedule(), e, "pretrain").loss_total for e in range(1, 6)]
        assert losses[-1] < losses[0]


class TestRunTraining:
    def test_convergence_rule(self):
        assert not pretrain_converged([5, 4, 3], 5, 1e-3)
        assert pretrain_converged([1.0, 1.0, 1.0, 1.0, 1.0, 0.9995], 5, 1e-3)
        assert not pretrain_converged([1.0, 1.0, 1.0, 1.0, 1.0, 0.99], 5, 1e-3)

    def test_phases_and_counts(self, train_images):
        cfg = tiny_config(pretrain_max_epochs=2, finetune_epochs=3, epochs_per_bdt_block=1)
        seen = []
        state = run_training(
            TrainingState(build_model(MINI, 0)), train_images, HAAR, cfg, BDTSchedule(block_length=1),
            on_epoch=lambda st, stats: seen.append((stats.phase, stats.epoch, stats.mu)),
        )
        assert state.finished and state.global_epoch == 5
        assert [(p, e) for p, e, _ in seen] == [("pretrain", 1), ("pretrain", 2), ("finetune", 1), ("finetune", 2), ("finetune", 3)]
        assert seen[2][2] == TABLE[1][1]

    def test_split_run_equals_continuous(self, train_images):
        cfg = tiny_config(pretrain_max_epochs=2, finetune_epochs=2)
        sched = BDTSchedule(block_length=1)
        full = run_training(TrainingState(build_model(MINI, 0)), train_images, HAAR, cfg, sched)
        part = TrainingState(build_model(MINI, 0))
        while not part.finished:
            run_training(part, train_images, HAAR, cfg, sched, max_epochs=1)
        assert part.params.digest() == full.params.digest()
        assert part.pretrain_losses == full.pretrain_losses

    def test_config_validation(self):
        with pytest.raises(DomainError):
            TrainConfig(sigma_min=30, sigma_max=20)
        with pytest.raises(DomainError):
            TrainConfig(batch_size=0)
        with pytest.raises(DomainError):
            TrainConfig(sigma_max=80)
