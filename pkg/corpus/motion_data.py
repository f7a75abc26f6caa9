import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from config.constants import ANGLE_BOUND_DEG, MOTION_COLUMNS, MOTION_DIM, TARGET_FPS

logger = logging.getLogger(__name__)

FILE_HEADER = ["frame"] + MOTION_COLUMNS
_META_RE = re.compile(r"(\w+)=(\S+)")


class MotionParseError(ValueError):
    pass


class ResampleError(ValueError):
    pass


class DegenerateDimensionError(ValueError):
    pass


class MotionFrame(NamedTuple):
    head_pitch: float
    head_yaw: float
    head_roll: float
    l_eye_pitch: float
    l_eye_yaw: float
    r_eye_pitch: float
    r_eye_yaw: float


@dataclass
class MotionSequence:
    """T×7 angular trajectory in degrees, channels in MOTION_COLUMNS order.

    ``meta`` carries free-form header fields; ``start_frame`` (when present)
    is the index of frame 0 inside the source session.
    """

    values: np.ndarray
    fps: float = TARGET_FPS
    session_id: str = ""
    speaker_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != MOTION_DIM:
            raise ValueError(f"motion values must be T×{MOTION_DIM}, got {self.values.shape}")
        if len(self.values) < 1:
            raise ValueError("motion sequence must hold at least one frame")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("motion values must be finite")
        if self.fps <= 0:
            raise ValueError("fps must be > 0")

    def __len__(self):
        return len(self.values)

    @property
    def start_frame(self) -> int:
        return int(self.meta.get("start_frame", 0))

    def frame(self, i: int) -> MotionFrame:
        return MotionFrame(*map(float, self.values[i]))

    def with_values(self, values: np.ndarray, **meta) -> "MotionSequence":
        return MotionSequence(
            values=values,
            fps=self.fps,
            session_id=self.session_id,
            speaker_id=self.speaker_id,
            meta={**self.meta, **meta},
        )

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=MOTION_COLUMNS)
        df.insert(0, "frame", np.arange(len(df)))
        return df


@dataclass
class WindowPair:
    past_motion: np.ndarray
    future_motion: np.ndarray
    audio_window: np.ndarray
    t_index: int
    speaker_id: str = ""
    session_id: str = ""


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values) - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(mean=np.asarray(d["mean"], dtype=np.float64), std=np.asarray(d["std"], dtype=np.float64))


# ---------------------------
# File I/O
# ---------------------------
def _read_header_comments(path: Path):
    meta = {}
    n_comment = 0
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            n_comment += 1
            meta.update(dict(_META_RE.findall(line)))
    return meta, n_comment


def load_motion_file(path) -> MotionSequence:
    path = Path(path)
    meta, n_comment = _read_header_comments(path)

    if "fps" not in meta:
        raise MotionParseError(f"{path}: header comment is missing the fps field")

    df = pd.read_csv(path, skiprows=n_comment, dtype=str)
    missing = [c for c in FILE_HEADER if c not in df.columns]
    if missing:
        raise MotionParseError(f"{path}: missing column(s) {missing}")
    if list(df.columns) != FILE_HEADER:
        raise MotionParseError(f"{path}: header must be exactly {','.join(FILE_HEADER)}")

    values = df[MOTION_COLUMNS].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad_rows = np.where(~np.all(np.isfinite(values), axis=1))[0]
    if len(bad_rows):
        row = int(bad_rows[0])
        raise MotionParseError(f"{path}: non-finite or unparsable value at row {row} (frame {df['frame'].iloc[row]})")
    if len(values) == 0:
        raise MotionParseError(f"{path}: no frames")

    fps = float(meta.pop("fps"))
    speaker = meta.pop("speaker", "")
    session = meta.pop("session", "")
    return MotionSequence(values=values, fps=fps, session_id=session, speaker_id=speaker, meta=meta)


def save_motion_file(path, seq: MotionSequence, extra_meta: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fps = int(round(seq.fps)) if float(seq.fps).is_integer() else seq.fps

    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# fps={fps} speaker={seq.speaker_id or 'unknown'} session={seq.session_id or 'unknown'}\n")
        if extra_meta:
            f.write("# " + " ".join(f"{k}={v}" for k, v in extra_meta.items()) + "\n")
        seq.to_frame().to_csv(f, index=False, float_format="%.9g")


# ---------------------------
# Cleaning
# ---------------------------
def resample_to_25fps(seq: MotionSequence) -> MotionSequence:
    if seq.fps == TARGET_FPS:
        return seq
    if len(seq) == 1:
        raise ResampleError(f"cannot resample a single frame from {seq.fps} fps")

    src_t = np.arange(len(seq)) / seq.fps
    n_out = int(np.floor((len(seq) - 1) * TARGET_FPS / seq.fps + 1e-9)) + 1
    dst_t = np.arange(n_out) / TARGET_FPS

    out = np.column_stack([np.interp(dst_t, src_t, seq.values[:, c]) for c in range(MOTION_DIM)])
    resampled = seq.with_values(out)
    resampled.fps = TARGET_FPS
    return resampled


def filter_extreme_angles(seq: MotionSequence, bound: float = ANGLE_BOUND_DEG) -> list[MotionSequence]:
    """Drop frames with any |angle| > bound and split into contiguous runs."""
    if bound <= 0:
        raise ValueError("bound must be > 0")

    keep = np.all(np.abs(seq.values) <= bound, axis=1)
    edges = np.diff(np.concatenate([[0], keep.astype(np.int8), [0]]))
    starts = np.where(edges == 1)[0]
    ends = np.where(edges == -1)[0]

    runs = [
        seq.with_values(seq.values[s:e], start_frame=seq.start_frame + int(s))
        for s, e in zip(starts, ends)
    ]
    dropped = int((~keep).sum())
    if dropped:
        logger.info("session %s: dropped %d extreme frames, %d run(s) kept", seq.session_id, dropped, len(runs))
    return runs


# ---------------------------
# Normalization
# ---------------------------
def fit_normalization(corpus: list[MotionSequence]) -> NormalizationStats:
    if not corpus:
        raise ValueError("empty corpus")
    stacked = np.concatenate([s.values for s in corpus], axis=0)
    if len(stacked) < 2:
        raise ValueError("need at least 2 frames to fit normalization")

    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)  # population (1/N)
    degenerate = [MOTION_COLUMNS[i] for i in np.where(std < 1e-8)[0]]
    if degenerate:
        raise DegenerateDimensionError(f"zero-variance dimension(s): {degenerate}")
    return NormalizationStats(mean=mean, std=std)


# ---------------------------
# Windowing
# ---------------------------
def make_windows(seq: MotionSequence, feats, M: int, N: int, stride: int) -> list[WindowPair]:
    frames = feats.frames if hasattr(feats, "frames") else np.asarray(feats)
    if len(frames) != len(seq):
        raise ValueError(f"feature length {len(frames)} != motion length {len(seq)}")
    if M < 2 or N < 1 or stride < 1:
        raise ValueError("require M >= 2, N >= 1, stride >= 1")

    windows = []
    for s in range(0, len(seq) - (M + N) + 1, stride):
        windows.append(WindowPair(
            past_motion=seq.values[s:s + M],
            future_motion=seq.values[s + M:s + M + N],
            audio_window=frames[s:s + M],
            t_index=seq.start_frame + s,
            speaker_id=seq.speaker_id,
            session_id=seq.session_id,
        ))
    return windows


def stack_windows(windows: list[WindowPair]):
    past = np.stack([w.past_motion for w in windows])
    future = np.stack([w.future_motion for w in windows])
    audio = np.stack([w.audio_window for w in windows])
    return past, future, audio
