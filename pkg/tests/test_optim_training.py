"""Adam updates against closed forms; training determinism and checkpointing."""

import numpy as np
import pytest

from nslab.engine import AdamState, TrainConfig, adam_step, train_autoencoder
from nslab.errors import ShapeError, TrainingError


class TestAdam:
    def test_first_step_hand_value(self):
        params = {"w": np.array([0.0])}
        state = AdamState(lr=1e-3)
        adam_step(params, {"w": np.array([1.0])}, state)
        # m-hat = v-hat = 1 after bias correction, so the step is lr/(1 + eps)
        assert abs(params["w"][0] - (-1e-3 / (1.0 + 1e-8))) < 1e-12
        assert abs(params["w"][0] + 1e-3) < 1e-9

    def test_zero_gradient_leaves_params(self):
        params = {"w": np.array([1.5])}
        adam_step(params, {"w": np.array([0.0])}, AdamState())
        assert params["w"][0] == 1.5

    def test_moments_follow_ema_closed_form(self):
        g = 0.7
        params = {"w": np.array([0.0])}
        state = AdamState()
        for t in range(1, 4):
            adam_step(params, {"w": np.array([g])}, state)
            m_expect = (1 - 0.9**t) * g  # EMA of a constant gradient
            v_expect = (1 - 0.999**t) * g * g
            assert state.m["w"][0] == pytest.approx(m_expect, rel=1e-12)
            assert state.v["w"][0] == pytest.approx(v_expect, rel=1e-12)
        assert state.t == 3


class TestTraining:
    def test_degenerate_zero_dataset(self):
        imgs = np.zeros((1, 1, 8, 8))
        cfg = TrainConfig(setup="relu_maxpool", epochs=5, batch_size=1)
        ckpt = train_autoencoder(imgs, imgs, cfg, seed=0)
        vals = [row[2] for row in ckpt.history]
        best_so_far = np.minimum.accumulate(vals)
        assert (np.diff(best_so_far) <= 0).all()
        assert ckpt.val_loss == min(vals)

    def test_same_seed_same_checkpoint(self):
        rng = np.random.default_rng(1)
        imgs = rng.uniform(size=(12, 1, 8, 8))
        val = rng.uniform(size=(4, 1, 8, 8))
        cfg = TrainConfig(setup="softplus_avepool", epochs=2, batch_size=4)
        a = train_autoencoder(imgs, val, cfg, seed=7)
        b = train_autoencoder(imgs, val, cfg, seed=7)
        assert a.epoch == b.epoch and a.val_loss == b.val_loss
        for name in a.params:
            assert a.params[name].tobytes() == b.params[name].tobytes()

    def test_empty_dataset_rejected(self):
        with pytest.raises(ShapeError):
            train_autoencoder(
                np.zeros((0, 1, 8, 8)), np.zeros((1, 1, 8, 8)), TrainConfig(epochs=1), 0
            )

    def test_divergence_reports_epoch(self):
        rng = np.random.default_rng(2)
        imgs = rng.uniform(size=(4, 1, 8, 8)) * 10.0
        # a step of ~lr per parameter overflows float64 within two batches
        cfg = TrainConfig(setup="relu_maxpool", epochs=3, batch_size=2, lr=1e80)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingError) as err:
                train_autoencoder(imgs, imgs, cfg, seed=0)
        assert err.value.epoch >= 0
