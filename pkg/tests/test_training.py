"""Focal loss, LR schedule, and the epoch loop with early stopping."""

import numpy as np
import pytest

from icurisk.errors import ConfigError, NumericError
from icurisk.model import DeteriorationModel, ModelConfig
from icurisk.sampling import SampleDataset
from icurisk.featurize import HourlyGrid
from icurisk.training import TrainConfig, focal_loss, lr_at, train
from helpers import max_rel_error, numerical_gradient


def logit(p):
    return np.log(p / (1.0 - p))


class TestFocalLoss:
    def test_reduces_to_half_bce(self):
        """gamma=0, alpha=0.5, eps=0 equals 0.5 x binary cross-entropy."""
        cfg = TrainConfig(alpha=0.5, gamma=0.0, label_smoothing=0.0)
        rng = np.random.default_rng(0)
        p = rng.uniform(0.05, 0.95, 50)
        y = (rng.random(50) < 0.3).astype(np.float64)
        loss, _ = focal_loss(logit(p), y, cfg)
        bce = -(y * np.log(p) + (1 - y) * np.log(1 - p)).mean()
        assert abs(loss - 0.5 * bce) < 1e-12

    def test_perfect_prediction_limit(self):
        """y=1, p -> 1 with eps=0 drives the loss to 0."""
        cfg = TrainConfig(label_smoothing=0.0)
        losses = [focal_loss(np.array([logit(p)]), np.array([1.0]), cfg)[0]
                  for p in (0.9, 0.99, 0.999999)]
        assert losses[0] > losses[1] > losses[2]
        assert losses[2] < 1e-11

    def test_extreme_logits_never_nan(self):
        cfg = TrainConfig()
        big = np.array([-500.0, -50.0, 0.0, 50.0, 500.0])
        y = np.array([1.0, 0.0, 1.0, 0.0, 1.0])
        loss, grad = focal_loss(big, y, cfg)
        assert np.isfinite(loss)
        assert np.isfinite(grad).all()

    def test_fixture_against_extended_precision_oracle(self):
        """p=0.9, y=1, alpha=0.75, gamma=2, eps=0.05 vs mpmath arithmetic."""
        import mpmath as mp
        mp.mp.dps = 50
        cfg = TrainConfig(alpha=0.75, gamma=2.0, label_smoothing=0.05)
        p64 = np.float64(0.9)
        loss, _ = focal_loss(np.array([logit(p64)]), np.array([1.0]), cfg)

        lo = mp.mpf(repr(float(logit(p64))))
        p = 1 / (1 + mp.e ** (-lo))
        y_s = mp.mpf(1) * (1 - mp.mpf("0.05")) + mp.mpf("0.05") / 2
        expected = -(mp.mpf("0.75") * y_s * (1 - p) ** 2 * mp.log(p)
                     + mp.mpf("0.25") * (1 - y_s) * p ** 2 * mp.log(1 - p))
        assert abs(loss - float(expected)) < 1e-12

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            cfg = TrainConfig(alpha=float(rng.uniform(0.05, 0.95)),
                              gamma=float(rng.uniform(0.0, 4.0)),
                              label_smoothing=float(rng.uniform(0.0, 0.4)))
            logits = rng.standard_normal(30) * 4
            y = (rng.random(30) < 0.5).astype(np.float64)
            loss, _ = focal_loss(logits, y, cfg)
            assert loss >= 0.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        cfg = TrainConfig()
        logits = rng.standard_normal(12)
        y = (rng.random(12) < 0.4).astype(np.float64)
        _, grad = focal_loss(logits, y, cfg)

        def f():
            return focal_loss(logits, y, cfg)[0]

        assert max_rel_error(grad, numerical_gradient(f, logits)) < 1e-4

    def test_smoothing_penalizes_confident_extremes(self):
        """Loss at p ~= y strictly increases with the smoothing factor."""
        for p, y in ((0.999, 1.0), (0.001, 0.0)):
            losses = []
            for eps in (0.0, 0.05, 0.1, 0.2):
                cfg = TrainConfig(label_smoothing=eps)
                losses.append(focal_loss(np.array([logit(p)]),
                                         np.array([y]), cfg)[0])
            assert all(a < b for a, b in zip(losses, losses[1:]))

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(alpha=1.5)
        with pytest.raises(ConfigError):
            TrainConfig(gamma=-1.0)
        with pytest.raises(ConfigError):
            TrainConfig(label_smoothing=0.5)


class TestLrSchedule:
    def test_full_rate_at_epoch_three(self):
        cfg = TrainConfig()
        assert lr_at(3, cfg) == pytest.approx(2.0e-4, rel=1e-12)

    def test_warmup_point_value(self):
        """Epoch 2 of the 1-indexed ramp runs at two thirds of full rate."""
        cfg = TrainConfig()
        assert lr_at(2, cfg) == pytest.approx(1.33e-4, rel=0.01)

    def test_cosine_endpoint_at_floor(self):
        cfg = TrainConfig()
        assert abs(lr_at(cfg.max_epochs, cfg) - cfg.lr_floor) < 1e-9

    def test_monotone_decay_after_warmup(self):
        cfg = TrainConfig()
        rates = [lr_at(e, cfg) for e in range(3, cfg.max_epochs + 1)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_epoch_out_of_range(self):
        with pytest.raises(ConfigError):
            lr_at(0, TrainConfig())
        with pytest.raises(ConfigError):
            lr_at(51, TrainConfig())


def toy_dataset(n_stays=6, seed=0, n_hours=60) -> SampleDataset:
    """Tiny dataset with random grids and alternating labels."""
    rng = np.random.default_rng(seed)
    grids = {}
    cols = {k: [] for k in ("stay", "subject", "t", "label", "note", "split")}
    for i in range(n_stays):
        sid = f"S{i}"
        values = rng.standard_normal((n_hours, 26))
        grids[sid] = HourlyGrid(stay_id=sid, values=values,
                                mask=np.ones((n_hours, 26), np.uint8),
                                imputed=True, normalized=True)
        for t in range(6, 30):
            cols["stay"].append(sid)
            cols["subject"].append(f"P{i}")
            cols["t"].append(t)
            cols["label"].append(int(rng.random() < 0.3))
            cols["split"].append("train" if i < n_stays - 2 else "val")
    n = len(cols["stay"])
    return SampleDataset(
        grids=grids, notes={},
        stay_ids=np.array(cols["stay"], object),
        subject_ids=np.array(cols["subject"], object),
        hours=np.array(cols["t"], np.int32),
        labels=np.array(cols["label"], np.int8),
        has_note=np.zeros(n, np.int8),
        note_row=np.full(n, -1, np.int32),
        age_norm=np.zeros(n, np.float32),
        gender_flag=np.zeros(n, np.int8),
        missing_frac=np.full(n, 0.2, np.float32),
        split=np.array(cols["split"], object),
    )


def tiny_train_model(seed=0):
    cfg = ModelConfig(mode="structured_only", input_dim=26, lstm_hidden=4,
                      lstm_layers=2, dropout=0.3, text_in=8, proj_dim=8,
                      clf_hidden=4)
    return DeteriorationModel(cfg, seed=seed, dtype=np.float32)


class TestTrainLoop:
    def test_scripted_early_stopping(self):
        """Validation AUROC peaking at epoch 2 stops after epoch 9 with
        patience 7 and returns the epoch-2 checkpoint."""
        trajectory = {1: 0.70, 2: 0.80, 3: 0.79, 4: 0.78, 5: 0.77,
                      6: 0.76, 7: 0.75, 8: 0.74, 9: 0.73, 10: 0.72,
                      11: 0.71, 12: 0.70}
        dataset = toy_dataset()
        model = tiny_train_model()
        cfg = TrainConfig(max_epochs=50, patience=7, batch_size=16,
                          batches_per_epoch=1, seed=1)
        result = train(model, dataset, cfg,
                       val_metric=lambda e: (trajectory[e], 0.0))
        assert len(result.history) == 9  # stopped after epoch 9
        assert result.checkpoint.epoch == 2
        assert result.checkpoint.best_val_auroc == pytest.approx(0.80)
        assert result.checkpoint.patience_counter == 7

    def test_best_checkpoint_parameters_snapshot(self):
        """The returned arrays are the epoch-2 weights, not the last ones."""
        dataset = toy_dataset()
        model = tiny_train_model()
        snapshots = {}

        def metric(epoch):
            snapshots[epoch] = model.params.state_arrays()
            return {1: 0.7, 2: 0.9}.get(epoch, 0.5), 0.0

        cfg = TrainConfig(max_epochs=6, patience=3, batch_size=16,
                          batches_per_epoch=1, seed=1)
        result = train(model, dataset, cfg, val_metric=metric)
        assert result.checkpoint.epoch == 2
        for name, arr in result.checkpoint.arrays.items():
            assert np.array_equal(arr, snapshots[2][name])

    def test_same_seed_identical_history(self):
        dataset = toy_dataset()
        cfg = TrainConfig(max_epochs=3, patience=7, batch_size=16,
                          batches_per_epoch=2, seed=5)
        r1 = train(tiny_train_model(seed=2), dataset, cfg)
        r2 = train(tiny_train_model(seed=2), dataset, cfg)
        assert [(h.epoch, h.train_loss, h.val_auroc) for h in r1.history] == \
               [(h.epoch, h.train_loss, h.val_auroc) for h in r2.history]

    def test_checkpoint_auroc_equals_history_max(self):
        dataset = toy_dataset()
        cfg = TrainConfig(max_epochs=4, patience=7, batch_size=16,
                          batches_per_epoch=2, seed=5)
        result = train(tiny_train_model(seed=2), dataset, cfg)
        assert result.checkpoint.best_val_auroc == pytest.approx(
            max(h.val_auroc for h in result.history))

    def test_nonfinite_loss_aborts_with_batch_indices(self):
        dataset = toy_dataset()
        model = tiny_train_model()
        model.params["clf.W2"].data[...] = np.inf
        cfg = TrainConfig(max_epochs=2, patience=7, batch_size=16,
                          batches_per_epoch=1, seed=1)
        with pytest.raises(NumericError, match="sample rows"):
            train(model, dataset, cfg, val_metric=lambda e: (0.5, 0.0))
