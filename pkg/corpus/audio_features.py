import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import librosa
import numpy as np
from scipy.io import wavfile

from config.constants import AUDIO_SAMPLE_RATE, TARGET_FPS
from training.checkpoint import CheckpointFormatError, read_tensor_file, write_tensor_file

logger = logging.getLogger(__name__)

MAX_ALIGN_SLACK = 2


class UnsupportedAudioError(ValueError):
    pass


class AudioTooShortError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


class FeatureFormatError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = AUDIO_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise UnsupportedAudioError("audio must be mono")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be > 0")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio samples must be finite")

    @property
    def seconds(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class FeatureSequence:
    frames: np.ndarray
    fps: float = TARGET_FPS

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2:
            raise FeatureFormatError(f"features must be rank 2 (T×F), got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise FeatureFormatError("features contain non-finite values")

    def __len__(self):
        return len(self.frames)

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]

    def slice(self, start: int, stop: int) -> "FeatureSequence":
        return FeatureSequence(self.frames[start:stop], self.fps)


@dataclass
class MelConfig:
    n_fft: int = 400
    hop: int = 160
    n_mels: int = 26
    fmin: float = 50.0
    fmax: float = 7600.0
    log_floor: float = 1e-6
    sample_rate: int = AUDIO_SAMPLE_RATE

    def validate(self):
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ValueError(f"need 0 <= fmin < fmax <= {self.sample_rate / 2}, got {self.fmin}, {self.fmax}")
        if self.hop < 1 or self.n_fft < self.hop:
            raise ValueError("need 1 <= hop <= n_fft")
        if self.sample_rate % self.hop or (self.sample_rate // self.hop) % TARGET_FPS:
            raise UnsupportedAudioError(
                f"hop {self.hop} at {self.sample_rate} Hz does not give a feature rate that is a multiple of {TARGET_FPS} Hz"
            )
        if self.log_floor <= 0:
            raise ValueError("log_floor must be > 0")
        return self

    @property
    def rows_per_frame(self) -> int:
        return self.sample_rate // self.hop // TARGET_FPS

    @classmethod
    def for_sample_rate(cls, sample_rate: int, **overrides) -> "MelConfig":
        """Scale n_fft/hop to keep 25 ms windows at a 100 Hz feature rate."""
        if sample_rate % 100:
            raise UnsupportedAudioError(f"sample rate {sample_rate} Hz cannot be aligned to {TARGET_FPS} FPS")
        base = cls()
        params = {
            "n_fft": int(round(base.n_fft * sample_rate / AUDIO_SAMPLE_RATE)),
            "hop": sample_rate // 100,
            "fmax": min(base.fmax, sample_rate / 2),
            "sample_rate": sample_rate,
        }
        params.update(overrides)
        return cls(**{**asdict(base), **params}).validate()


# ---------------------------
# WAV I/O
# ---------------------------
def load_wav(path) -> AudioClip:
    try:
        rate, data = wavfile.read(path)
    except ValueError as e:
        raise UnsupportedAudioError(f"{path}: {e}") from e

    if data.dtype != np.int16:
        raise UnsupportedAudioError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    if data.ndim != 1:
        raise UnsupportedAudioError(f"{path}: expected mono, got {data.shape[1]} channels")
    return AudioClip(samples=data.astype(np.float64) / 32768.0, sample_rate=int(rate))


def save_wav(path, clip: AudioClip):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, clip.sample_rate, pcm)


# ---------------------------
# Log-mel front end
# ---------------------------
def mel_band_edges(cfg: MelConfig) -> np.ndarray:
    """n_mels + 2 edge frequencies (Hz) on the HTK scale; filter k peaks at edges[k + 1]."""
    return librosa.mel_frequencies(n_mels=cfg.n_mels + 2, fmin=cfg.fmin, fmax=cfg.fmax, htk=True)


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular HTK filters over the rfft bins, each row scaled to unit area."""
    fb = librosa.filters.mel(sr=cfg.sample_rate, n_fft=cfg.n_fft, n_mels=cfg.n_mels, fmin=cfg.fmin, fmax=cfg.fmax,
                             htk=True, norm=None, dtype=np.float64)
    area = fb.sum(axis=1, keepdims=True)
    empty = np.where(area[:, 0] == 0)[0]
    if len(empty):
        raise ValueError(f"mel filter(s) {empty.tolist()} cover no FFT bin; use fewer mels or a larger n_fft")
    return fb / area


def power_spectrogram(x: np.ndarray, cfg: MelConfig) -> np.ndarray:
    """|STFT|² with one Hann frame per hop starting at sample 0, zero-padded at the end; (frames, bins)."""
    n_frames = len(x) // cfg.hop
    need = (n_frames - 1) * cfg.hop + cfg.n_fft
    padded = np.pad(x[:need], (0, max(0, need - len(x))))
    stft = librosa.stft(padded, n_fft=cfg.n_fft, hop_length=cfg.hop, win_length=cfg.n_fft, window="hann",
                        center=False)
    return (np.abs(stft) ** 2).T[:n_frames]


def log_mel(clip: AudioClip, cfg: MelConfig | None = None) -> FeatureSequence:
    cfg = (cfg or MelConfig.for_sample_rate(clip.sample_rate)).validate()
    if cfg.sample_rate != clip.sample_rate:
        raise UnsupportedAudioError(f"config is for {cfg.sample_rate} Hz, clip is {clip.sample_rate} Hz")

    x = clip.samples
    if len(x) < cfg.n_fft:
        raise AudioTooShortError(f"clip has {len(x)} samples, need at least n_fft={cfg.n_fft}")

    power = power_spectrogram(x, cfg)
    logmel = np.log(power @ mel_filterbank(cfg).T + cfg.log_floor)

    block = cfg.rows_per_frame
    n_out = len(logmel) // block
    out = logmel[:n_out * block].reshape(n_out, block, cfg.n_mels).mean(axis=1)
    return FeatureSequence(frames=out, fps=TARGET_FPS)


def align_features(feats: FeatureSequence, motion_len: int) -> FeatureSequence:
    diff = len(feats) - motion_len
    if abs(diff) > MAX_ALIGN_SLACK:
        raise AlignmentError(f"feature length {len(feats)} vs motion length {motion_len}: off by {diff} frames")
    if diff >= 0:
        return FeatureSequence(feats.frames[:motion_len], feats.fps)
    pad = np.repeat(feats.frames[-1:], -diff, axis=0)
    return FeatureSequence(np.concatenate([feats.frames, pad], axis=0), feats.fps)


# ---------------------------
# Feature files
# ---------------------------
def save_features(path, feats: FeatureSequence):
    write_tensor_file(path, {"features": feats.frames}, {"kind": "features", "fps": feats.fps})


def load_features(path) -> FeatureSequence:
    try:
        tensors, meta = read_tensor_file(path)
    except CheckpointFormatError as e:
        raise FeatureFormatError(str(e)) from e

    if "features" not in tensors:
        raise FeatureFormatError(f"{path}: no 'features' tensor")
    frames = tensors["features"]
    if frames.ndim != 2:
        raise FeatureFormatError(f"{path}: features must be rank 2, got shape {frames.shape}")
    return FeatureSequence(frames=frames, fps=float(meta.get("fps", TARGET_FPS)))
