import logging
from dataclasses import dataclass, field

import numpy as np

from models.nn_core import NumericError, ParameterStore

logger = logging.getLogger(__name__)

DEFAULT_CLIP_NORM = 5.0


@dataclass
class OptimizerState:
    """Adaptive moment estimation state for the trainable entries of a store."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = DEFAULT_CLIP_NORM
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParameterStore, **hyper) -> "OptimizerState":
        state = cls(**hyper)
        for name in store.trainable_names():
            state.m[name] = np.zeros_like(store[name])
            state.v[name] = np.zeros_like(store[name])
        return state

    def validate(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.step < 0:
            raise ValueError("step must be >= 0")
        return self

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "clip_norm": self.clip_norm, "step": self.step}


def clip_gradients(store: ParameterStore, max_norm: float):
    norm = store.global_grad_norm()
    if max_norm is None or norm <= max_norm:
        return norm, False
    scale = max_norm / (norm + 1e-12)
    for name in store.trainable_names():
        store.param(name).grad *= store.dtype.type(scale)
    logger.info("gradient norm %.4f clipped to %.1f", norm, max_norm)
    return norm, True


def adam_step(store: ParameterStore, state: OptimizerState) -> dict:
    """One bias-corrected update of every trainable entry; gradients are zeroed afterward.

    Frozen entries are never touched. Returns the pre-clip gradient norm and
    whether clipping fired.
    """
    names = store.trainable_names()
    for name in names:
        if not np.all(np.isfinite(store.grad(name))):
            raise NumericError(f"non-finite gradient for parameter {name}")

    grad_norm, clipped = clip_gradients(store, state.clip_norm)

    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t

    for name in names:
        p = store.param(name)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        m, v, g = state.m[name], state.v[name], p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.value -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.value.dtype)

    store.zero_grad()
    return {"grad_norm": grad_norm, "clipped": clipped}
