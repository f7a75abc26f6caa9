import json

import numpy as np
import pytest

from corpus.motion_data import fit_normalization
from models.generator import GenerationConfig, MotionGenerator, fuse_inputs, mse_loss, predict_window
from models.style_encoder import (
    StyleEncoder,
    StyleEncoderConfig,
    encode_forward,
    init_style_encoder,
    nt_xent_loss,
    sample_pairs,
)
from training.checkpoint import load_checkpoint, save_checkpoint
from training.gradcheck import SELECTORS, finite_difference_check, numeric_gradient, relative_error, run_all
from training.trainer import (
    ConfigMismatchError,
    TrainConfig,
    pretrain_style,
    style_training_runs,
    train_generator,
    training_windows,
)


def _small_gen(**kw):
    base = dict(style_dim=0, model_dim=8, lstm_layers=1, lstm_hidden=16)
    base.update(kw)
    return GenerationConfig(**base)


class TestGradCheck:
    @pytest.mark.parametrize("selector", SELECTORS)
    @pytest.mark.parametrize("seed", [0, 7])
    def test_every_composite_passes(self, selector, seed):
        result = finite_difference_check(selector, seed)
        assert result.passed, result.to_dict()

    def test_run_all_covers_selectors(self):
        results = run_all(seed=1, selectors=("linear", "lstm_stack"))
        assert [r.selector for r in results] == ["linear", "lstm_stack"]

    def test_unknown_selector(self):
        with pytest.raises(ValueError):
            finite_difference_check("conv")

    def test_numeric_gradient_of_quadratic(self):
        x = np.array([1.0, -2.0, 3.0])
        g = numeric_gradient(lambda: float(np.sum(x ** 2)), x)
        np.testing.assert_allclose(g, 2 * x, rtol=1e-8)
        np.testing.assert_array_equal(x, [1.0, -2.0, 3.0])

    def test_relative_error(self):
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
        assert relative_error(np.ones(2), np.ones(2)) == 0.0
        assert relative_error(np.array([1.0]), np.array([-1.0])) == pytest.approx(1.0)


class TestStylePretraining:
    def test_loss_trends_down(self, tiny_sessions, tmp_path):
        style_cfg = StyleEncoderConfig(style_dim=8, n_layers=1, n_heads=2, ff_dim=16)
        cfg = TrainConfig(stage="style", batch_size=4, epochs=2, steps_per_epoch=25, lr=3e-3, seed=0)
        ckpt = pretrain_style(tiny_sessions, style_cfg, cfg, log_path=tmp_path / "log.jsonl", progress=False)

        lines = (tmp_path / "log.jsonl").read_text(encoding="utf-8").splitlines()
        losses = [json.loads(line)["loss"] for line in lines]
        assert len(losses) == 50
        assert np.mean(losses[-10:]) < np.mean(losses[:10])
        assert len(ckpt.meta["epoch_losses"]) == 2

        encoder = StyleEncoder.from_checkpoint(ckpt)
        assert encoder.store.trainable_names() == []
        assert encoder.embed(tiny_sessions[0].motion.values[:25]).shape == (8,)

    def test_first_logged_loss_matches_recomputed(self, tiny_sessions, tmp_path):
        style_cfg = StyleEncoderConfig(style_dim=8, n_layers=1, n_heads=2, ff_dim=16)
        cfg = TrainConfig(stage="style", batch_size=4, max_steps=1, precision="f64", seed=0)
        pretrain_style(tiny_sessions, style_cfg, cfg, log_path=tmp_path / "log.jsonl", progress=False)
        logged = json.loads((tmp_path / "log.jsonl").read_text(encoding="utf-8").splitlines()[0])

        stats = fit_normalization([s.motion for s in tiny_sessions])
        runs = style_training_runs(tiny_sessions, stats)
        store = init_style_encoder(style_cfg, 0, np.float64)
        batch = sample_pairs(runs, 4, style_cfg.window, seed=[0, 0])
        S, _ = encode_forward(store, style_cfg, batch.stacked())
        expected, _ = nt_xent_loss(S, cfg.tau)

        assert logged["step"] == 1
        assert logged["loss"] == pytest.approx(expected, rel=1e-12)
        assert logged["ntxent"] == logged["loss"]

    def test_no_sessions(self):
        style_cfg = StyleEncoderConfig(style_dim=8, n_layers=1, n_heads=2, ff_dim=16)
        with pytest.raises(ValueError, match="no training sessions"):
            pretrain_style([], style_cfg, TrainConfig(stage="style", batch_size=4), progress=False)


class TestGeneratorTraining:
    def test_loss_decreases_over_100_steps(self, tiny_sessions, tmp_path):
        cfg = TrainConfig(epochs=200, max_steps=100, lr=3e-3, seed=0)
        train_generator(tiny_sessions, None, _small_gen(), cfg, log_path=tmp_path / "log.jsonl", progress=False)

        records = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text(encoding="utf-8").splitlines()]
        losses = [r["loss"] for r in records]
        assert len(losses) == 100
        assert all(np.isfinite(losses))
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

    def test_mse_only_loss_matches_recomputed(self, tiny_sessions, tmp_path):
        gen_cfg = _small_gen(lam=1.0)
        cfg = TrainConfig(max_steps=1, precision="f64", seed=0)
        train_generator(tiny_sessions, None, gen_cfg, cfg, log_path=tmp_path / "log.jsonl", progress=False)
        logged = json.loads((tmp_path / "log.jsonl").read_text(encoding="utf-8").splitlines()[0])

        stats = fit_normalization([s.motion for s in tiny_sessions])
        past, future, audio = training_windows(tiny_sessions, stats, gen_cfg.past, gen_cfg.future, cfg.stride)
        model = MotionGenerator.create(gen_cfg, stats, None, 0, np.float64)
        idx = np.random.default_rng([0, 0]).permutation(len(past))[:cfg.batch_size]
        pred = predict_window(model.store, gen_cfg, fuse_inputs(model.store, gen_cfg, audio[idx], past[idx]))

        assert logged["loss"] == pytest.approx(mse_loss(pred, future[idx]), rel=1e-12)
        assert logged["mse"] == logged["loss"]

    def test_same_seed_gives_identical_checkpoint_bytes(self, tiny_sessions, tmp_path):
        for name in ("a", "b"):
            ckpt = train_generator(tiny_sessions, None, _small_gen(), TrainConfig(max_steps=4, seed=3), progress=False)
            save_checkpoint(tmp_path / f"{name}.ckpt", ckpt)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_no_sessions(self):
        with pytest.raises(ValueError, match="no training sessions"):
            train_generator([], None, _small_gen(), TrainConfig(max_steps=1), progress=False)

    def test_resume_is_bitwise(self, tiny_sessions, tmp_path):
        gen_cfg = _small_gen()
        full = train_generator(tiny_sessions, None, gen_cfg, TrainConfig(epochs=2, max_steps=6), progress=False)

        half = train_generator(tiny_sessions, None, gen_cfg, TrainConfig(epochs=2, max_steps=3), progress=False)
        save_checkpoint(tmp_path / "half.ckpt", half)
        resumed = train_generator(tiny_sessions, None, gen_cfg, TrainConfig(epochs=2, max_steps=6),
                                  resume=load_checkpoint(tmp_path / "half.ckpt"), progress=False)

        assert resumed.optimizer.step == full.optimizer.step == 6
        for name in full.store:
            np.testing.assert_array_equal(resumed.store[name], full.store[name])

    def test_frozen_style_encoder(self, tiny_sessions):
        style_cfg = StyleEncoderConfig(style_dim=8, n_layers=1, n_heads=2, ff_dim=16)
        style = pretrain_style(tiny_sessions, style_cfg, TrainConfig(stage="style", batch_size=4, max_steps=2),
                               progress=False)
        before = {n: style.store[n].copy() for n in style.store}

        ckpt = train_generator(tiny_sessions, style, _small_gen(style_dim=8), TrainConfig(max_steps=2),
                               progress=False)
        for name, value in before.items():
            np.testing.assert_array_equal(ckpt.store[name], value)
        model = MotionGenerator.from_checkpoint(ckpt)
        assert model.style is not None
        assert all(n.startswith("gen.") for n in model.store.trainable_names())

    def test_style_width_mismatch(self, tiny_sessions):
        style_cfg = StyleEncoderConfig(style_dim=8, n_layers=1, n_heads=2, ff_dim=16)
        style = pretrain_style(tiny_sessions, style_cfg, TrainConfig(stage="style", batch_size=4, max_steps=1),
                               progress=False)
        with pytest.raises(ConfigMismatchError):
            train_generator(tiny_sessions, style, _small_gen(style_dim=32), TrainConfig(max_steps=1), progress=False)

    def test_missing_style_checkpoint(self, tiny_sessions):
        with pytest.raises(ConfigMismatchError):
            train_generator(tiny_sessions, None, _small_gen(style_dim=8), TrainConfig(max_steps=1), progress=False)
