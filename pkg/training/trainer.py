import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from tqdm import tqdm

from config.constants import FUTURE_WINDOW
from corpus.loader import SessionData
from corpus.motion_data import NormalizationStats, fit_normalization, stack_windows
from models.generator import GenerationConfig, MotionGenerator, window_loss_and_grad
from models.style_encoder import (
    StyleEncoder,
    StyleEncoderConfig,
    contrastive_loss_and_grad,
    init_style_encoder,
    sample_pairs,
)
from training.checkpoint import Checkpoint
from training.optimizer import DEFAULT_CLIP_NORM, OptimizerState, adam_step

logger = logging.getLogger(__name__)

STAGES = ("style", "generator")
DEFAULT_LR = {"style": 1e-3, "generator": 3e-4}
PRECISIONS = {"f32": np.float32, "f64": np.float64}


class ConfigMismatchError(ValueError):
    pass


@dataclass
class TrainConfig:
    stage: str = "generator"
    epochs: int = 10
    batch_size: int = 16
    steps_per_epoch: int = 25
    max_steps: int | None = None
    lr: float | None = None
    seed: int = 0
    precision: str = "f32"
    lam: float = 0.8
    tau: float = 0.1
    stride: int = FUTURE_WINDOW
    clip_norm: float = DEFAULT_CLIP_NORM

    def validate(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if self.stage == "style" and self.batch_size < 2:
            raise ValueError("style stage needs batch_size >= 2 (pairs)")
        if self.batch_size < 1 or self.epochs < 1 or self.steps_per_epoch < 1 or self.stride < 1:
            raise ValueError(f"invalid loop sizes in {self}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {list(PRECISIONS)}")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        return self

    @property
    def learning_rate(self) -> float:
        return self.lr if self.lr is not None else DEFAULT_LR[self.stage]

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


class TrainLog:
    """One JSON object per optimizer step, appended to train_log.jsonl."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, record: dict):
        self.records.append(record)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record) + "\n")

    def losses(self) -> list[float]:
        return [r["loss"] for r in self.records]


def _epoch_means(records: list[dict], key: str = "epoch") -> list[float]:
    out = {}
    for r in records:
        out.setdefault(r[key], []).append(r["loss"])
    return [float(np.mean(v)) for _, v in sorted(out.items())]


# ---------------------------
# Stage 1: style encoder
# ---------------------------
def style_training_runs(sessions: list[SessionData], stats: NormalizationStats):
    """Filtered runs with normalized values, the unit pairs are drawn from."""
    runs = []
    for s in sessions:
        for run in s.runs():
            runs.append(run.motion.with_values(stats.apply(run.motion.values)))
    return runs


def pretrain_style(sessions: list[SessionData], style_cfg: StyleEncoderConfig, cfg: TrainConfig,
                   log_path=None, progress: bool = True) -> Checkpoint:
    cfg.validate()
    style_cfg.validate()
    if not sessions:
        raise ValueError("no training sessions")

    stats = fit_normalization([s.motion for s in sessions])
    runs = style_training_runs(sessions, stats)
    store = init_style_encoder(style_cfg, cfg.seed, cfg.dtype)
    opt = OptimizerState.for_store(store, lr=cfg.learning_rate, clip_norm=cfg.clip_norm).validate()
    log = TrainLog(log_path)

    total = cfg.epochs * cfg.steps_per_epoch
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    logger.info("style pretraining: %d step(s), %d pairs/batch, tau=%.3g, %d run(s)",
                total, cfg.batch_size, cfg.tau, len(runs))

    for step in tqdm(range(total), desc="style", disable=not progress):
        batch = sample_pairs(runs, cfg.batch_size, style_cfg.window, seed=[cfg.seed, step])
        loss = contrastive_loss_and_grad(store, style_cfg, batch.stacked(), cfg.tau)
        info = adam_step(store, opt)
        log.write({
            "step": step + 1, "stage": "style", "epoch": step // cfg.steps_per_epoch,
            "loss": loss, "ntxent": loss, "grad_norm": info["grad_norm"], "clipped": info["clipped"],
        })

    epoch_losses = _epoch_means(log.records)
    logger.info("style pretraining done: first loss %.4f, last loss %.4f", log.losses()[0], log.losses()[-1])

    encoder = StyleEncoder(store, style_cfg, stats)
    meta = encoder.meta()
    meta.update({"kind": "style_encoder", "seed": cfg.seed, "train_config": asdict(cfg), "epoch_losses": epoch_losses})
    return Checkpoint(store=store, meta=meta, optimizer=opt)


# ---------------------------
# Stage 2: generator
# ---------------------------
def training_windows(sessions: list[SessionData], stats: NormalizationStats, M: int, N: int, stride: int):
    windows = [w for s in sessions for w in s.windows(M, N, stride)]
    if not windows:
        raise ValueError(f"no training windows of length M+N={M + N} in the corpus")
    past, future, audio = stack_windows(windows)
    return stats.apply(past), stats.apply(future), audio


def _build_model(sessions, style_ckpt, gen_cfg: GenerationConfig, cfg: TrainConfig) -> MotionGenerator:
    style = StyleEncoder.from_checkpoint(style_ckpt) if style_ckpt is not None else None
    if gen_cfg.style_dim:
        if style is None:
            raise ConfigMismatchError(f"style_dim={gen_cfg.style_dim} needs a style encoder checkpoint")
        if style.cfg.style_dim != gen_cfg.style_dim:
            raise ConfigMismatchError(f"style checkpoint has d_s={style.cfg.style_dim}, config asks for {gen_cfg.style_dim}")
        if style.window != gen_cfg.past:
            raise ConfigMismatchError(f"style checkpoint window {style.window} != generator M={gen_cfg.past}")

    stats = style.stats if style is not None else fit_normalization([s.motion for s in sessions])
    return MotionGenerator.create(gen_cfg, stats, style, cfg.seed, cfg.dtype)


def train_generator(sessions: list[SessionData], style_ckpt: Checkpoint | None, gen_cfg: GenerationConfig,
                    cfg: TrainConfig, resume: Checkpoint | None = None, log_path=None,
                    progress: bool = True) -> Checkpoint:
    """Window training on ground-truth history of λ·MSE + (1−λ)·velocity with the style encoder frozen."""
    cfg.validate()
    gen_cfg.validate()
    if not sessions:
        raise ValueError("no training sessions")

    feature_dim = sessions[0].features.feature_dim
    if gen_cfg.feature_dim != feature_dim:
        raise ConfigMismatchError(f"config feature_dim {gen_cfg.feature_dim} but corpus features have F={feature_dim}")

    if resume is not None:
        model = MotionGenerator.from_checkpoint(resume)
        if asdict(model.cfg) != asdict(gen_cfg):
            raise ConfigMismatchError("resume checkpoint was trained with a different generator config")
        if resume.optimizer is None:
            raise ConfigMismatchError("resume checkpoint carries no optimizer state")
        opt = resume.optimizer
    else:
        model = _build_model(sessions, style_ckpt, gen_cfg, cfg)
        opt = OptimizerState.for_store(model.store, lr=cfg.learning_rate, clip_norm=cfg.clip_norm)
    opt.validate()

    past, future, audio = training_windows(sessions, model.stats, gen_cfg.past, gen_cfg.future, cfg.stride)
    styles = model.style.embed_normalized(past) if gen_cfg.style_dim else None

    n = len(past)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    done = opt.step
    log = TrainLog(log_path)
    logger.info("generator training: %d window(s), %d step(s)/epoch, lambda=%.2f, d_s=%d, resuming at step %d",
                n, steps_per_epoch, gen_cfg.lam, gen_cfg.style_dim, done)

    bar = tqdm(total=max(total - done, 0), desc="generator", disable=not progress)
    for epoch in range(cfg.epochs):
        perm = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        for b in range(steps_per_epoch):
            step = epoch * steps_per_epoch + b
            if step < done:
                continue
            if step >= total:
                break
            idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            loss, terms = window_loss_and_grad(
                model.store, gen_cfg, past[idx], future[idx], audio[idx],
                styles[idx] if styles is not None else None,
            )
            info = adam_step(model.store, opt)
            log.write({
                "step": step + 1, "stage": "generator", "epoch": epoch, "loss": loss,
                "mse": terms["mse"], "vel": terms["vel"],
                "grad_norm": info["grad_norm"], "clipped": info["clipped"],
            })
            bar.update(1)
    bar.close()

    if log.records:
        logger.info("generator training done: first loss %.4f, last loss %.4f", log.losses()[0], log.losses()[-1])

    meta = model.meta()
    meta.update({"seed": cfg.seed, "train_config": asdict(cfg), "epoch_losses": _epoch_means(log.records)})
    return Checkpoint(store=model.store, meta=meta, optimizer=opt)
