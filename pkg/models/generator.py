"""Speech-conditioned motion generator.

Each step fuses an audio window, the motion history and a style vector into
Z (M×(2d+d_s)), runs the LSTM stack over it and maps the last N hidden states
to the next N frames. Inference slides that step forward by N frames, feeding
predictions back in as history.
"""
import logging
from dataclasses import asdict, dataclass

import numpy as np

from config.constants import FUTURE_WINDOW, MOTION_DIM, PAST_WINDOW
from corpus.motion_data import MotionSequence, NormalizationStats
from models.nn_core import (
    LstmStackConfig,
    ParameterStore,
    ShapeMismatchError,
    check_finite,
    init_parameters,
    linear_backward,
    linear_forward,
    linear_layout,
    lstm_stack_backward,
    lstm_stack_forward,
)
from models.style_encoder import StyleEncoder

logger = logging.getLogger(__name__)

PREFIX = "gen"
STYLE_MODES = ("recompute", "fixed")


@dataclass
class GenerationConfig:
    past: int = PAST_WINDOW
    future: int = FUTURE_WINDOW
    model_dim: int = 64
    style_dim: int = 64
    lam: float = 0.8
    lstm_layers: int = 3
    lstm_hidden: int = 128
    feature_dim: int = 26

    def validate(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.past < 2 or self.future < 1:
            raise ValueError("require M >= 2 and N >= 1")
        if self.past < self.future:
            raise ValueError(f"M={self.past} < N={self.future}: the head reads the last N of M hidden states")
        if self.model_dim < 1 or self.feature_dim < 1 or self.style_dim < 0:
            raise ValueError(f"invalid widths in {self}")
        self.lstm().validate()
        return self

    @property
    def fused_dim(self) -> int:
        return 2 * self.model_dim + self.style_dim

    def lstm(self) -> LstmStackConfig:
        return LstmStackConfig(n_layers=self.lstm_layers, hidden=self.lstm_hidden, input_dim=self.fused_dim)

    def layout(self):
        return (
            linear_layout(f"{PREFIX}.audio_proj", self.feature_dim, self.model_dim)
            + linear_layout(f"{PREFIX}.motion_proj", MOTION_DIM, self.model_dim)
            + self.lstm().layout(f"{PREFIX}.lstm")
            + linear_layout(f"{PREFIX}.head", self.lstm_hidden, MOTION_DIM)
        )


# ---------------------------
# Fusion
# ---------------------------
def fuse_forward(store: ParameterStore, cfg: GenerationConfig, audio_win, motion_win, style=None):
    if audio_win.shape[:-1] != motion_win.shape[:-1]:
        raise ShapeMismatchError(f"audio window {audio_win.shape} and motion window {motion_win.shape} disagree")

    A, c_a = linear_forward(store, f"{PREFIX}.audio_proj", audio_win.astype(store.dtype, copy=False))
    X, c_x = linear_forward(store, f"{PREFIX}.motion_proj", motion_win.astype(store.dtype, copy=False))
    parts = [A, X]

    if cfg.style_dim:
        if style is None:
            raise ShapeMismatchError("style vector required when style_dim > 0")
        style = np.asarray(style, dtype=store.dtype)
        if style.shape[-1] != cfg.style_dim:
            raise ShapeMismatchError(f"style width {style.shape[-1]} != style_dim {cfg.style_dim}")
        parts.append(np.broadcast_to(style[..., None, :], A.shape[:-1] + (cfg.style_dim,)))

    return np.concatenate(parts, axis=-1), (c_a, c_x)


def fuse_backward(store: ParameterStore, cfg: GenerationConfig, cache, dZ):
    c_a, c_x = cache
    d = cfg.model_dim
    d_audio = linear_backward(store, f"{PREFIX}.audio_proj", c_a, dZ[..., :d])
    d_motion = linear_backward(store, f"{PREFIX}.motion_proj", c_x, dZ[..., d:2 * d])
    d_style = dZ[..., 2 * d:].sum(axis=-2) if cfg.style_dim else None
    return d_audio, d_motion, d_style


def fuse_inputs(store: ParameterStore, cfg: GenerationConfig, audio_win, motion_win, style=None) -> np.ndarray:
    Z, _ = fuse_forward(store, cfg, audio_win, motion_win, style)
    return Z


# ---------------------------
# Prediction
# ---------------------------
def predict_forward(store: ParameterStore, cfg: GenerationConfig, Z: np.ndarray):
    M, N = Z.shape[-2], cfg.future
    if M < N:
        raise ValueError(f"window of {M} frames cannot yield {N} predictions (M < N)")
    if Z.shape[-1] != cfg.fused_dim:
        raise ShapeMismatchError(f"fused width {Z.shape[-1]} != {cfg.fused_dim}")

    H, c_l = lstm_stack_forward(store, f"{PREFIX}.lstm", Z, cfg.lstm_layers)
    Y, c_h = linear_forward(store, f"{PREFIX}.head", H[..., M - N:, :])
    return Y, (c_l, c_h, H.shape, M)


def predict_backward(store: ParameterStore, cfg: GenerationConfig, cache, dY) -> np.ndarray:
    c_l, c_h, h_shape, M = cache
    dH = np.zeros(h_shape, dtype=dY.dtype)
    dH[..., M - cfg.future:, :] = linear_backward(store, f"{PREFIX}.head", c_h, dY)
    return lstm_stack_backward(store, f"{PREFIX}.lstm", c_l, dH)


def predict_window(store: ParameterStore, cfg: GenerationConfig, Z: np.ndarray) -> np.ndarray:
    Y, _ = predict_forward(store, cfg, Z)
    return Y


# ---------------------------
# Losses
# ---------------------------
def _check_pair(pred, gt):
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} vs ground truth {gt.shape}")


def mse_loss(pred, gt) -> float:
    """Mean over windows of (1/T) Σ_t ||pred_t - gt_t||²."""
    _check_pair(pred, gt)
    diff = np.asarray(pred, dtype=np.float64) - gt
    return float(np.mean(np.sum(diff ** 2, axis=(-1, -2)) / diff.shape[-2]))


def mse_loss_grad(pred, gt) -> np.ndarray:
    diff = np.asarray(pred, dtype=np.float64) - gt
    n_windows = diff.size // (diff.shape[-1] * diff.shape[-2])
    return 2.0 * diff / (diff.shape[-2] * n_windows)


def velocity_loss(pred, gt) -> float:
    """Mean over windows of (1/(T-1)) Σ_{t>=2} ||Δpred_t - Δgt_t||²."""
    _check_pair(pred, gt)
    T = pred.shape[-2]
    if T < 2:
        raise ValueError("velocity loss needs at least 2 frames")
    e = np.diff(np.asarray(pred, dtype=np.float64), axis=-2) - np.diff(np.asarray(gt, dtype=np.float64), axis=-2)
    return float(np.mean(np.sum(e ** 2, axis=(-1, -2)) / (T - 1)))


def velocity_loss_grad(pred, gt) -> np.ndarray:
    T = pred.shape[-2]
    e = np.diff(np.asarray(pred, dtype=np.float64), axis=-2) - np.diff(np.asarray(gt, dtype=np.float64), axis=-2)
    n_windows = e.size // (e.shape[-1] * e.shape[-2])
    de = 2.0 * e / ((T - 1) * n_windows)
    grad = np.zeros(pred.shape, dtype=np.float64)
    grad[..., 1:, :] += de
    grad[..., :-1, :] -= de
    return grad


def combined_loss(pred, gt, lam: float) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if lam == 1.0:
        return mse_loss(pred, gt)
    if lam == 0.0:
        return velocity_loss(pred, gt)
    return lam * mse_loss(pred, gt) + (1.0 - lam) * velocity_loss(pred, gt)


def combined_loss_and_grad(pred, gt, lam: float):
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if lam < 1.0 and pred.shape[-2] < 2:
        raise ValueError("velocity term needs windows of at least 2 frames")

    mse = mse_loss(pred, gt)
    vel = velocity_loss(pred, gt) if pred.shape[-2] >= 2 else 0.0
    grad = lam * mse_loss_grad(pred, gt)
    if lam < 1.0:
        grad = grad + (1.0 - lam) * velocity_loss_grad(pred, gt)
    return lam * mse + (1.0 - lam) * vel, {"mse": mse, "vel": vel}, grad


def window_loss_and_grad(store: ParameterStore, cfg: GenerationConfig, past, future, audio, styles=None):
    """Forward/backward over a batch of ground-truth-history windows; gradients land in the store."""
    Z, c_f = fuse_forward(store, cfg, audio, past, styles)
    Y, c_p = predict_forward(store, cfg, Z)
    check_finite("generator output", Y)
    loss, terms, dY = combined_loss_and_grad(Y, future, cfg.lam)
    dZ = predict_backward(store, cfg, c_p, dY.astype(store.dtype))
    fuse_backward(store, cfg, c_f, dZ)
    return loss, terms


# ---------------------------
# Model wrapper
# ---------------------------
class MotionGenerator:
    """Generator weights plus the frozen style encoder and normalization they were trained with."""

    def __init__(self, store: ParameterStore, cfg: GenerationConfig, stats: NormalizationStats,
                 style: StyleEncoder | None = None):
        self.store = store
        self.cfg = cfg
        self.stats = stats
        self.style = style
        if cfg.style_dim and style is None:
            raise ValueError("a style encoder is required when style_dim > 0")
        if cfg.style_dim and (style.cfg.style_dim != cfg.style_dim or style.window != cfg.past):
            raise ValueError(
                f"style encoder (d_s={style.cfg.style_dim}, M={style.window}) does not match "
                f"generator (d_s={cfg.style_dim}, M={cfg.past})"
            )

    @classmethod
    def create(cls, cfg: GenerationConfig, stats: NormalizationStats, style: StyleEncoder | None, seed: int,
               dtype=np.float32) -> "MotionGenerator":
        store = init_parameters(cfg.validate(), seed, dtype)
        if style is not None:
            store.merge(style.store, trainable=False)
        return cls(store, cfg, stats, style)

    @classmethod
    def from_checkpoint(cls, ckpt) -> "MotionGenerator":
        meta = ckpt.meta
        if meta.get("kind") != "generator":
            raise ValueError(f"expected a generator checkpoint, got kind={meta.get('kind')!r}")
        cfg = GenerationConfig(**meta["gen_config"]).validate()
        style = StyleEncoder.from_checkpoint(ckpt) if "style_config" in meta else None
        ckpt.store.set_trainable(f"{PREFIX}.", True)
        return cls(ckpt.store, cfg, NormalizationStats.from_dict(meta["stats"]), style)

    def meta(self) -> dict:
        meta = self.style.meta() if self.style is not None else {}
        meta.update({"kind": "generator", "gen_config": asdict(self.cfg), "stats": self.stats.to_dict()})
        return meta

    def style_of(self, history: np.ndarray) -> np.ndarray | None:
        if not self.cfg.style_dim:
            return None
        return self.style.embed_normalized(history)

    def reference_style(self, reference: MotionSequence) -> np.ndarray:
        if self.style is None:
            raise ValueError("model has no style encoder")
        _, E = self.style.window_embeddings(reference.values, stride=self.style.window)
        return E.mean(axis=0)

    def step(self, audio_win, history, style) -> np.ndarray:
        Z = fuse_inputs(self.store, self.cfg, audio_win, history, style)
        return predict_window(self.store, self.cfg, Z).astype(np.float64)


def rollout(model: MotionGenerator, seed_window: np.ndarray, feats, style_mode: str = "recompute",
            style: np.ndarray | None = None, start_frame: int = 0) -> MotionSequence:
    """Autoregressive generation with stride N from a normalized M-frame seed window.

    Output covers feature frames [M, M + K·N) with K = ⌊(T − M)/N⌋, denormalized
    to degrees; ``start_frame`` is the seed window's position in its session.
    """
    cfg = model.cfg
    M, N = cfg.past, cfg.future
    frames = feats.frames if hasattr(feats, "frames") else np.asarray(feats)

    if style_mode not in STYLE_MODES:
        raise ValueError(f"style_mode must be one of {STYLE_MODES}, got {style_mode!r}")
    if seed_window.shape != (M, MOTION_DIM):
        raise ShapeMismatchError(f"seed window must be ({M}, {MOTION_DIM}), got {seed_window.shape}")
    if len(frames) < M + N:
        raise ValueError(f"{len(frames)} feature frames is shorter than M+N={M + N}")
    if style_mode == "fixed" and cfg.style_dim and style is None:
        raise ValueError("fixed style mode needs a style vector")

    K = (len(frames) - M) // N
    history = np.asarray(seed_window, dtype=np.float64)
    out = []
    for k in range(K):
        s = model.style_of(history) if style_mode == "recompute" else style
        pred = model.step(frames[k * N:k * N + M], history, s)
        out.append(pred)
        history = np.concatenate([history, pred], axis=0)[-M:]

    values = model.stats.invert(np.concatenate(out, axis=0))
    return MotionSequence(values=values, meta={"start_frame": start_frame + M, "style_mode": style_mode})


def style_transfer_rollout(model: MotionGenerator, seed_window: np.ndarray, feats, reference: MotionSequence,
                           start_frame: int = 0) -> MotionSequence:
    if len(reference) < model.cfg.past:
        raise ValueError(f"reference motion needs at least {model.cfg.past} frames")
    style = model.reference_style(reference)
    return rollout(model, seed_window, feats, style_mode="fixed", style=style, start_frame=start_frame)
