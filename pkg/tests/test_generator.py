import numpy as np
import pytest

from corpus.motion_data import MotionSequence, NormalizationStats
from models.generator import (
    GenerationConfig,
    MotionGenerator,
    combined_loss,
    fuse_inputs,
    mse_loss,
    predict_window,
    rollout,
    style_transfer_rollout,
    velocity_loss,
)
from models.nn_core import ShapeMismatchError, init_parameters
from models.style_encoder import StyleEncoder, StyleEncoderConfig, init_style_encoder


def _toy_cfg(**kw):
    base = dict(past=6, future=3, model_dim=4, style_dim=0, lstm_layers=1, lstm_hidden=5, feature_dim=3)
    base.update(kw)
    return GenerationConfig(**base)


def _unit_stats():
    return NormalizationStats(np.zeros(7), np.ones(7))


def _styled_model(seed=0):
    style_cfg = StyleEncoderConfig(window=6, style_dim=4, n_layers=1, n_heads=2, ff_dim=8)
    encoder = StyleEncoder(init_style_encoder(style_cfg, seed, np.float64), style_cfg, _unit_stats())
    return MotionGenerator.create(_toy_cfg(style_dim=4), _unit_stats(), encoder, seed, np.float64)


class TestFusion:
    def test_zero_path_broadcasts_style(self, rng):
        cfg = _toy_cfg(model_dim=2, style_dim=1)
        store = init_parameters(cfg, seed=0, dtype=np.float64)
        for name in store:
            store[name][...] = 0.0
        Z = fuse_inputs(store, cfg, rng.normal(size=(6, 3)), rng.normal(size=(6, 7)), style=[5.0])
        np.testing.assert_array_equal(Z, np.tile([0, 0, 0, 0, 5.0], (6, 1)))

    def test_width(self, rng):
        cfg = _toy_cfg(style_dim=2)
        store = init_parameters(cfg, seed=0, dtype=np.float64)
        Z = fuse_inputs(store, cfg, rng.normal(size=(2, 6, 3)), rng.normal(size=(2, 6, 7)), rng.normal(size=(2, 2)))
        assert Z.shape == (2, 6, cfg.fused_dim)

    def test_missing_style(self, rng):
        cfg = _toy_cfg(style_dim=2)
        store = init_parameters(cfg, seed=0, dtype=np.float64)
        with pytest.raises(ShapeMismatchError):
            fuse_inputs(store, cfg, rng.normal(size=(6, 3)), rng.normal(size=(6, 7)))


class TestPredict:
    def test_zero_params_zero_output(self, rng):
        cfg = _toy_cfg()
        store = init_parameters(cfg, seed=0, dtype=np.float64)
        for name in store:
            store[name][...] = 0.0
        Y = predict_window(store, cfg, rng.normal(size=(6, cfg.fused_dim)))
        assert Y.shape == (3, 7)
        np.testing.assert_array_equal(Y, 0.0)

    def test_future_longer_than_past(self):
        with pytest.raises(ValueError):
            _toy_cfg(past=3, future=4).validate()


class TestLosses:
    def test_mse(self, rng):
        gt = rng.normal(size=(9, 7))
        assert mse_loss(gt, gt) == 0.0
        assert mse_loss(gt + 1.0, gt) == pytest.approx(7.0)
        assert mse_loss(gt + 3.0, gt) == pytest.approx(9 * 7.0)

    def test_velocity_hand_case(self):
        gt = np.zeros((3, 7))
        pred = gt.copy()
        pred[1, 0] = 1.0
        assert velocity_loss(pred, gt) == pytest.approx(1.0)
        assert mse_loss(pred, gt) == pytest.approx(1 / 3)
        assert combined_loss(pred, gt, 0.5) == pytest.approx(0.5 * (1 / 3) + 0.5 * 1.0)

    def test_velocity_translation_invariant(self, rng):
        pred, gt = rng.normal(size=(2, 8, 7))
        c = rng.normal(size=7)
        assert velocity_loss(pred + c, gt) == pytest.approx(velocity_loss(pred, gt))

    def test_lambda_endpoints(self, rng):
        pred, gt = rng.normal(size=(2, 8, 7))
        assert combined_loss(pred, gt, 1.0) == mse_loss(pred, gt)
        assert combined_loss(pred, gt, 0.0) == velocity_loss(pred, gt)
        with pytest.raises(ValueError):
            combined_loss(pred, gt, 1.5)

    def test_errors(self, rng):
        with pytest.raises(ShapeMismatchError):
            mse_loss(np.zeros((3, 7)), np.zeros((4, 7)))
        with pytest.raises(ValueError):
            velocity_loss(np.zeros((1, 7)), np.zeros((1, 7)))


class TestRollout:
    def test_zero_model_gives_mean_pose(self, rng):
        cfg = _toy_cfg(past=25, future=10)
        stats = NormalizationStats(rng.normal(size=7), np.ones(7))
        model = MotionGenerator.create(cfg, stats, None, seed=0, dtype=np.float64)
        for name in model.store:
            model.store[name][...] = 0.0
        out = rollout(model, rng.normal(size=(25, 7)), rng.normal(size=(105, 3)), start_frame=4)
        assert len(out) == 80
        assert out.start_frame == 29
        np.testing.assert_allclose(out.values, np.tile(stats.mean, (80, 1)))

    def test_deterministic(self, rng):
        model = _styled_model()
        seed, feats = rng.normal(size=(6, 7)), rng.normal(size=(30, 3))
        np.testing.assert_array_equal(rollout(model, seed, feats).values, rollout(model, seed, feats).values)

    def test_short_features(self, rng):
        model = _styled_model()
        with pytest.raises(ValueError):
            rollout(model, rng.normal(size=(6, 7)), rng.normal(size=(8, 3)))

    def test_fixed_mode_needs_style(self, rng):
        model = _styled_model()
        with pytest.raises(ValueError):
            rollout(model, rng.normal(size=(6, 7)), rng.normal(size=(30, 3)), style_mode="fixed")


class TestStyleTransfer:
    def test_own_history_matches_first_recompute_step(self, rng):
        model = _styled_model()
        seed, feats = rng.normal(size=(6, 7)), rng.normal(size=(30, 3))
        own = style_transfer_rollout(model, seed, feats, MotionSequence(seed))
        recompute = rollout(model, seed, feats, style_mode="recompute")
        np.testing.assert_allclose(own.values[:3], recompute.values[:3], atol=1e-10)

    def test_different_references_differ(self, rng):
        model = _styled_model()
        seed, feats = rng.normal(size=(6, 7)), rng.normal(size=(30, 3))
        a = style_transfer_rollout(model, seed, feats, MotionSequence(rng.normal(scale=5, size=(12, 7))))
        b = style_transfer_rollout(model, seed, feats, MotionSequence(rng.normal(scale=5, size=(12, 7))))
        assert np.linalg.norm(a.values - b.values) > 0

    def test_short_reference(self, rng):
        model = _styled_model()
        with pytest.raises(ValueError):
            style_transfer_rollout(model, rng.normal(size=(6, 7)), rng.normal(size=(30, 3)),
                                   MotionSequence(rng.normal(size=(4, 7))))
