import logging
from dataclasses import dataclass
from pathlib import Path

import pandas as pd
from joblib import Parallel, delayed

from config.constants import ANGLE_BOUND_DEG
from corpus.audio_features import (
    FeatureSequence,
    MelConfig,
    align_features,
    load_features,
    load_wav,
    log_mel,
)
from corpus.motion_data import (
    MotionSequence,
    WindowPair,
    filter_extreme_angles,
    load_motion_file,
    make_windows,
    resample_to_25fps,
)

logger = logging.getLogger(__name__)

MANIFEST_FIELDS = ["motion_path", "audio_path", "speaker_id", "session_id"]
FEATURE_SUFFIX = ".feat"


@dataclass
class ManifestEntry:
    motion_path: Path
    audio_path: Path
    speaker_id: str
    session_id: str


@dataclass
class SessionData:
    """A session's motion with its frame-aligned audio features."""

    motion: MotionSequence
    features: FeatureSequence

    def __post_init__(self):
        if len(self.motion) != len(self.features):
            raise ValueError(
                f"session {self.motion.session_id}: {len(self.features)} feature rows for {len(self.motion)} frames"
            )

    def __len__(self):
        return len(self.motion)

    @property
    def speaker_id(self) -> str:
        return self.motion.speaker_id

    @property
    def session_id(self) -> str:
        return self.motion.session_id

    @property
    def start_frame(self) -> int:
        return self.motion.start_frame

    def segment(self, start: int, stop: int) -> "SessionData":
        motion = self.motion.with_values(self.motion.values[start:stop], start_frame=self.start_frame + start)
        return SessionData(motion, self.features.slice(start, stop))

    def runs(self, bound: float = ANGLE_BOUND_DEG) -> list["SessionData"]:
        out = []
        for run in filter_extreme_angles(self.motion, bound):
            offset = run.start_frame - self.start_frame
            out.append(SessionData(run, self.features.slice(offset, offset + len(run))))
        return out

    def windows(self, M: int, N: int, stride: int) -> list[WindowPair]:
        out = []
        for run in self.runs():
            out.extend(make_windows(run.motion, run.features, M, N, stride))
        return out


# ---------------------------
# Manifest
# ---------------------------
def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    df = pd.read_json(path, lines=True, dtype=False)
    missing = [c for c in MANIFEST_FIELDS if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: manifest missing field(s) {missing}")

    base = path.parent
    entries = []
    for row in df.itertuples(index=False):
        motion_path, audio_path = Path(row.motion_path), Path(row.audio_path)
        entries.append(ManifestEntry(
            motion_path=motion_path if motion_path.is_absolute() else base / motion_path,
            audio_path=audio_path if audio_path.is_absolute() else base / audio_path,
            speaker_id=str(row.speaker_id),
            session_id=str(row.session_id),
        ))
    return entries


def write_manifest(path, entries: list[ManifestEntry]):
    path = Path(path)
    base = path.parent
    rows = [
        {
            "motion_path": Path(e.motion_path).relative_to(base).as_posix() if Path(e.motion_path).is_relative_to(base) else str(e.motion_path),
            "audio_path": Path(e.audio_path).relative_to(base).as_posix() if Path(e.audio_path).is_relative_to(base) else str(e.audio_path),
            "speaker_id": e.speaker_id,
            "session_id": e.session_id,
        }
        for e in entries
    ]
    pd.DataFrame(rows, columns=MANIFEST_FIELDS).to_json(path, orient="records", lines=True)


def features_path_for(features_dir, session_id: str) -> Path:
    return Path(features_dir) / f"{session_id}{FEATURE_SUFFIX}"


# ---------------------------
# Sessions
# ---------------------------
def load_session(entry: ManifestEntry, features_dir=None, mel_cfg: MelConfig | None = None) -> SessionData:
    motion = resample_to_25fps(load_motion_file(entry.motion_path))
    motion.speaker_id = entry.speaker_id
    motion.session_id = entry.session_id

    feat_path = features_path_for(features_dir, entry.session_id) if features_dir else None
    if feat_path is not None and feat_path.exists():
        feats = load_features(feat_path)
    else:
        feats = log_mel(load_wav(entry.audio_path), mel_cfg)

    return SessionData(motion, align_features(feats, len(motion)))


def load_corpus(manifest_path, features_dir=None, mel_cfg: MelConfig | None = None, threads: int = 1) -> list[SessionData]:
    entries = read_manifest(manifest_path)
    sessions = Parallel(n_jobs=threads)(
        delayed(load_session)(e, features_dir, mel_cfg) for e in entries
    )
    logger.info("loaded %d session(s) from %s", len(sessions), manifest_path)
    return sessions


def temporal_split(session: SessionData, holdout_fraction: float):
    """Split a session into (head, tail); the tail is the final holdout_fraction of frames."""
    if not 0.0 <= holdout_fraction < 1.0:
        raise ValueError("holdout_fraction must lie in [0, 1)")
    n_tail = int(round(len(session) * holdout_fraction))
    if n_tail == 0:
        return session, None
    cut = len(session) - n_tail
    if cut < 1:
        raise ValueError(f"session {session.session_id} too short to split")
    return session.segment(0, cut), session.segment(cut, len(session))


def split_corpus(sessions: list[SessionData], holdout_fraction: float):
    train, test = [], []
    for s in sessions:
        head, tail = temporal_split(s, holdout_fraction)
        train.append(head)
        if tail is not None:
            test.append(tail)
    return train, test
