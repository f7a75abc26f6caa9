import logging
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from config.constants import MOTION_DIM, PAST_WINDOW
from corpus.motion_data import MotionSequence, NormalizationStats
from models.nn_core import (
    ParameterStore,
    ShapeMismatchError,
    TransformerConfig,
    init_parameters,
    linear_backward,
    linear_forward,
    linear_layout,
    temporal_encoding,
    transformer_encoder_backward,
    transformer_encoder_forward,
)

logger = logging.getLogger(__name__)

PREFIX = "style"
GAP_MIN_WINDOWS = 10
SAMPLE_ATTEMPTS = 20


class UndefinedSimilarityError(ValueError):
    pass


class InsufficientPairsError(ValueError):
    pass


@dataclass
class StyleEncoderConfig:
    window: int = PAST_WINDOW
    style_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 128
    input_dim: int = MOTION_DIM

    def validate(self):
        if self.window < 2:
            raise ValueError("style window must be >= 2 frames")
        self.transformer().validate()
        return self

    def transformer(self) -> TransformerConfig:
        return TransformerConfig(
            n_layers=self.n_layers, n_heads=self.n_heads, model_dim=self.style_dim, ff_dim=self.ff_dim
        )

    def layout(self):
        return linear_layout(f"{PREFIX}.in", self.input_dim, self.style_dim) + self.transformer().layout(
            f"{PREFIX}.encoder"
        )


@dataclass
class PairBatch:
    anchors: np.ndarray
    partners: np.ndarray
    speakers: list
    sessions: list
    starts: list

    def __len__(self):
        return len(self.anchors)

    def stacked(self) -> np.ndarray:
        """(2N, M, 7): anchors first, so row i pairs with row (i + N) mod 2N."""
        return np.concatenate([self.anchors, self.partners], axis=0)


# ---------------------------
# Encoder forward / backward
# ---------------------------
def encode_forward(store: ParameterStore, cfg: StyleEncoderConfig, windows: np.ndarray):
    squeeze = windows.ndim == 2
    x = windows[None] if squeeze else windows
    if x.ndim != 3 or x.shape[1] != cfg.window or x.shape[2] != cfg.input_dim:
        raise ShapeMismatchError(f"style encoder expects windows of shape ({cfg.window}, {cfg.input_dim}), got {windows.shape}")

    x = x.astype(store.dtype, copy=False)
    h, c_in = linear_forward(store, f"{PREFIX}.in", x)
    h = h + temporal_encoding(cfg.window, cfg.style_dim).astype(store.dtype)
    h, c_enc = transformer_encoder_forward(store, f"{PREFIX}.encoder", h, cfg.transformer())
    s = h.mean(axis=1)
    return (s[0] if squeeze else s), (c_in, c_enc, squeeze)


def encode_backward(store: ParameterStore, cfg: StyleEncoderConfig, cache, ds: np.ndarray) -> np.ndarray:
    c_in, c_enc, squeeze = cache
    ds = ds[None] if squeeze else ds
    dh = np.repeat(ds[:, None, :] / cfg.window, cfg.window, axis=1)
    dh = transformer_encoder_backward(store, f"{PREFIX}.encoder", c_enc, dh)
    dx = linear_backward(store, f"{PREFIX}.in", c_in, dh)
    return dx[0] if squeeze else dx


def encode_window(store: ParameterStore, cfg: StyleEncoderConfig, window: np.ndarray) -> np.ndarray:
    s, _ = encode_forward(store, cfg, window)
    return s


def init_style_encoder(cfg: StyleEncoderConfig, seed: int, dtype=np.float32) -> ParameterStore:
    return init_parameters(cfg.validate(), seed, dtype)


# ---------------------------
# Similarity and contrastive loss
# ---------------------------
def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def nt_xent_loss(S: np.ndarray, tau: float):
    """Summed NT-Xent over all 2N anchors with positives p(i) = (i + N) mod 2N.

    Returns (loss, dL/dS).
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    n2 = len(S)
    if n2 < 4 or n2 % 2:
        raise ValueError(f"need an even batch of at least 4 embeddings, got {n2}")

    norms = np.linalg.norm(S, axis=1)
    if np.any(norms == 0):
        raise UndefinedSimilarityError(f"zero embedding(s) at rows {np.where(norms == 0)[0].tolist()}")

    U = S / norms[:, None]
    logits = (U @ U.T) / tau
    np.fill_diagonal(logits, -np.inf)
    lse = logsumexp(logits, axis=1)

    idx = np.arange(n2)
    pos = (idx + n2 // 2) % n2
    loss = float(np.sum(lse - logits[idx, pos]))

    dlogits = np.exp(logits - lse[:, None])
    dlogits[idx, pos] -= 1.0
    dsim = dlogits / tau
    dU = (dsim + dsim.T) @ U
    dS = (dU - U * np.sum(dU * U, axis=1, keepdims=True)) / norms[:, None]
    return loss, dS


def contrastive_loss_and_grad(store: ParameterStore, cfg: StyleEncoderConfig, windows: np.ndarray, tau: float) -> float:
    """Encode a stacked (2N, M, 7) pair batch, evaluate NT-Xent and backprop into the store."""
    S, cache = encode_forward(store, cfg, windows)
    loss, dS = nt_xent_loss(S.astype(np.float64), tau)
    encode_backward(store, cfg, cache, dS.astype(store.dtype))
    return loss


# ---------------------------
# Pair sampling
# ---------------------------
def _compatible(a, b, span: int, gap_min: int) -> bool:
    if a[0] != b[0] or a[1] != b[1]:
        return True
    lo, hi = sorted((a[2], b[2]))
    return hi - (lo + span) >= gap_min


def sample_pairs(runs: list[MotionSequence], N: int, M: int, seed, gap_min: int | None = None) -> PairBatch:
    """Draw N adjacent-window positive pairs whose members are mutual negatives.

    A pair is windows [t, t+M) and [t+M, t+2M) of one run. Two pairs may share a
    speaker only if they come from different sessions or are gap_min frames apart.
    """
    if N < 2:
        raise ValueError("need at least 2 pairs per batch")
    gap_min = GAP_MIN_WINDOWS * M if gap_min is None else gap_min
    span = 2 * M

    candidates = [
        (ri, t)
        for ri, run in enumerate(runs)
        for t in range(len(run) - span + 1)
    ]
    if len(candidates) < N:
        raise InsufficientPairsError(f"only {len(candidates)} candidate pair position(s) for {N} pairs")

    def key(c):
        run = runs[c[0]]
        return run.speaker_id, run.session_id, run.start_frame + c[1]

    rng = np.random.default_rng(seed)
    for _ in range(SAMPLE_ATTEMPTS):
        chosen = []
        for ci in rng.permutation(len(candidates)):
            k = key(candidates[ci])
            if all(_compatible(k, key(c), span, gap_min) for c in chosen):
                chosen.append(candidates[ci])
                if len(chosen) == N:
                    break
        if len(chosen) == N:
            break
    else:
        raise InsufficientPairsError(f"could not draw {N} mutually valid pairs in {SAMPLE_ATTEMPTS} attempts")

    anchors = np.stack([runs[ri].values[t:t + M] for ri, t in chosen])
    partners = np.stack([runs[ri].values[t + M:t + span] for ri, t in chosen])
    return PairBatch(
        anchors=anchors,
        partners=partners,
        speakers=[runs[ri].speaker_id for ri, _ in chosen],
        sessions=[runs[ri].session_id for ri, _ in chosen],
        starts=[runs[ri].start_frame + t for ri, t in chosen],
    )


# ---------------------------
# Inference wrapper
# ---------------------------
class StyleEncoder:
    """Frozen encoder applied to motion in degrees (normalized internally)."""

    def __init__(self, store: ParameterStore, cfg: StyleEncoderConfig, stats: NormalizationStats):
        self.store = store
        self.cfg = cfg
        self.stats = stats

    @classmethod
    def from_checkpoint(cls, ckpt) -> "StyleEncoder":
        meta = ckpt.meta
        if "style_config" not in meta or "stats" not in meta:
            raise ValueError("checkpoint carries no style encoder")
        cfg = StyleEncoderConfig(**meta["style_config"]).validate()
        store = ParameterStore(ckpt.store.dtype)
        for name in ckpt.store.names(f"{PREFIX}."):
            store.add(name, ckpt.store[name], trainable=False)
        return cls(store, cfg, NormalizationStats.from_dict(meta["stats"]))

    def meta(self) -> dict:
        return {"style_config": asdict(self.cfg), "stats": self.stats.to_dict()}

    @property
    def window(self) -> int:
        return self.cfg.window

    def embed_normalized(self, windows: np.ndarray, chunk: int = 256) -> np.ndarray:
        if windows.ndim == 2:
            return encode_window(self.store, self.cfg, windows).astype(np.float64)
        out = [encode_window(self.store, self.cfg, windows[i:i + chunk]) for i in range(0, len(windows), chunk)]
        return np.concatenate(out, axis=0).astype(np.float64)

    def embed(self, windows_deg: np.ndarray) -> np.ndarray:
        return self.embed_normalized(self.stats.apply(windows_deg))

    __call__ = embed

    def window_embeddings(self, values_deg: np.ndarray, stride: int | None = None):
        """Embeddings of windows [s, s+M) for s = 0, stride, ...; returns (starts, E)."""
        M = self.cfg.window
        stride = stride or M
        if len(values_deg) < M:
            raise ValueError(f"sequence of {len(values_deg)} frames is shorter than the style window {M}")
        starts = np.arange(0, len(values_deg) - M + 1, stride)
        windows = np.stack([values_deg[s:s + M] for s in starts])
        return starts, self.embed(windows)


# ---------------------------
# Embedding export
# ---------------------------
def embeddings_frame(speakers, sessions, t_index, E: np.ndarray) -> pd.DataFrame:
    df = pd.DataFrame({"speaker": list(speakers), "session": list(sessions), "t_index": list(t_index)})
    emb = pd.DataFrame(E, columns=[f"e_{i}" for i in range(E.shape[1])])
    return pd.concat([df, emb], axis=1)


def export_embeddings(path, df: pd.DataFrame):
    df.to_csv(path, index=False, float_format="%.9g")
    logger.info("wrote %d embedding(s) to %s", len(df), path)


def read_embeddings(path):
    df = pd.read_csv(path, dtype={"speaker": str, "session": str})
    cols = [c for c in df.columns if c.startswith("e_")]
    return df, df[cols].to_numpy(dtype=np.float64)
