"""Style-parameterized synthetic gaze/head/audio sessions.

World gaze alternates jittered fixations with minimum-jerk saccades between
targets. The head low-pass pursues a fraction (head_gain) of the gaze target
plus a slow drift, and the eyes hold the residual, so eye-in-head motion
counter-rotates against the head while the gaze is held. Audio is noise under an
energy envelope that bursts shortly before saccade onsets.
"""
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from config.constants import AUDIO_SAMPLE_RATE, TARGET_FPS
from corpus.audio_features import AudioClip, save_wav
from corpus.loader import ManifestEntry, write_manifest
from corpus.motion_data import MotionSequence, save_motion_file

logger = logging.getLogger(__name__)

TARGET_RANGE_DEG = 35.0
MIN_SACCADE_DEG = 3.0
MAX_EYE_IN_HEAD_DEG = 32.0
OUTPUT_CLIP_DEG = 39.5
HEAD_PURSUIT_ALPHA = 0.25
DRIFT_TAU_FRAMES = 50.0
AUDIO_LEAD_FRAMES = 5
SAMPLES_PER_FRAME = AUDIO_SAMPLE_RATE // TARGET_FPS

PROFILE_RANGES = {
    "fixation_dwell_mean": (5.0, 25.0),
    "saccade_rate": (0.5, 3.0),
    "saccade_amp_mean": (3.0, 15.0),
    "head_gain": (0.3, 0.9),
    "head_drift_scale": (0.5, 3.0),
    "speech_coupling": (0.2, 0.8),
    "noise_scale": (0.05, 0.3),
}


@dataclass
class StyleProfile:
    fixation_dwell_mean: float = 6.0
    saccade_rate: float = 3.0
    saccade_amp_mean: float = 14.0
    head_gain: float = 0.7
    head_drift_scale: float = 1.0
    speech_coupling: float = 0.5
    noise_scale: float = 0.1

    def validate(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{k} must be non-negative, got {v}")
        if self.head_gain > 1 or self.speech_coupling > 1:
            raise ValueError("head_gain and speech_coupling must be <= 1")
        return self


@dataclass
class SynthConfig:
    n_speakers: int = 4
    sessions_per_speaker: int = 2
    session_seconds: float = 60.0
    seed: int = 0

    def validate(self):
        if self.n_speakers < 1 or self.sessions_per_speaker < 1 or self.session_seconds <= 0:
            raise ValueError(f"all synth sizes must be positive: {self}")
        if self.session_seconds < 2:
            raise ValueError("sessions must last at least 2 seconds")
        return self


@dataclass
class GazeTrace:
    world_gaze: np.ndarray      # T×2 (pitch, yaw), binocular mean
    head: np.ndarray            # T×3 (pitch, yaw, roll)
    eyes: np.ndarray            # T×4 (l pitch, l yaw, r pitch, r yaw), eye-in-head
    fixation: np.ndarray        # T bool, False inside saccades
    onsets: np.ndarray          # saccade onset frames


def sample_style_profile(rng: np.random.Generator) -> StyleProfile:
    return StyleProfile(**{k: float(rng.uniform(lo, hi)) for k, (lo, hi) in PROFILE_RANGES.items()})


# ---------------------------
# Gaze / head simulation
# ---------------------------
def minimum_jerk(n_frames: int) -> np.ndarray:
    """Normalized positions at the n_frames samples after onset, ending at 1."""
    tau = np.arange(1, n_frames + 1) / n_frames
    return 10 * tau ** 3 - 15 * tau ** 4 + 6 * tau ** 5


def saccade_frames(amplitude: float) -> int:
    return int(np.clip(np.ceil(amplitude / 3.0) + 1, 2, 6))


def _next_target(current, amplitude, rng):
    phi = rng.uniform(0, 2 * np.pi)
    step = amplitude * np.array([np.sin(phi), np.cos(phi)])
    target = current + step
    flip = np.abs(target) > TARGET_RANGE_DEG
    target[flip] = current[flip] - step[flip]
    return np.clip(target, -TARGET_RANGE_DEG, TARGET_RANGE_DEG)


def _jitter(n_frames: int, noise: float, rng) -> np.ndarray:
    out = np.zeros((n_frames, 2))
    j = np.zeros(2)
    for t in range(n_frames):
        step = np.clip(-0.1 * j + rng.normal(scale=0.3 * noise, size=2), -noise, noise)
        j = np.clip(j + step, -2 * noise, 2 * noise)
        out[t] = j
    return out


def _ou_drift(n_frames: int, n_axes: int, scale: float, rng) -> np.ndarray:
    decay = 1.0 - 1.0 / DRIFT_TAU_FRAMES
    sigma = scale / (2.0 * TARGET_FPS)
    out = np.zeros((n_frames, n_axes))
    d = np.zeros(n_axes)
    for t in range(n_frames):
        d = decay * d + rng.normal(scale=sigma, size=n_axes)
        out[t] = d
    return out


def simulate_gaze(profile: StyleProfile, n_frames: int, rng: np.random.Generator) -> GazeTrace:
    profile.validate()

    target = rng.uniform(-10.0, 10.0, size=2)
    fixation_center = np.empty((n_frames, 2))
    fixation = np.ones(n_frames, dtype=bool)
    onsets = []

    t = 0
    while t < n_frames:
        # mean inter-onset interval is max(dwell, fps / rate)
        dwell = max(1, int(round(profile.fixation_dwell_mean * rng.uniform(0.7, 1.3))))
        if profile.saccade_rate > 0:
            extra = max(TARGET_FPS / profile.saccade_rate - profile.fixation_dwell_mean, 1.0)
            dwell += int(round(rng.exponential(extra)))
        else:
            dwell = n_frames
        end = min(n_frames, t + dwell)
        fixation_center[t:end] = target
        t = end
        if t >= n_frames:
            break

        amplitude = max(MIN_SACCADE_DEG, rng.normal(profile.saccade_amp_mean, 0.3 * profile.saccade_amp_mean))
        amplitude = min(amplitude, 2 * profile.saccade_amp_mean, 2 * TARGET_RANGE_DEG - 1)
        new_target = _next_target(target, amplitude, rng)
        n_sac = saccade_frames(float(np.linalg.norm(new_target - target)))
        path = target + minimum_jerk(n_sac)[:, None] * (new_target - target)
        end = min(n_frames, t + n_sac)
        fixation_center[t:end] = path[:end - t]
        fixation[t:end] = False
        onsets.append(t)
        target = new_target
        t = end

    world_gaze = fixation_center + _jitter(n_frames, profile.noise_scale, rng) * fixation[:, None]

    drift = _ou_drift(n_frames, 3, profile.head_drift_scale, rng)
    head = np.zeros((n_frames, 3))
    pursuit = profile.head_gain * fixation_center[0]
    for t in range(n_frames):
        pursuit = pursuit + HEAD_PURSUIT_ALPHA * (profile.head_gain * fixation_center[t] - pursuit)
        residual = world_gaze[t] - pursuit
        over = np.abs(residual) > MAX_EYE_IN_HEAD_DEG
        pursuit[over] = world_gaze[t][over] - np.sign(residual[over]) * MAX_EYE_IN_HEAD_DEG
        head[t, :2] = pursuit
    head = head + drift

    eye_noise = 0.25 * profile.noise_scale
    eye_mean = world_gaze - head[:, :2]
    left = eye_mean + np.clip(rng.normal(scale=eye_noise, size=(n_frames, 2)), -2 * eye_noise, 2 * eye_noise)
    right = eye_mean + np.clip(rng.normal(scale=eye_noise, size=(n_frames, 2)), -2 * eye_noise, 2 * eye_noise)
    eyes = np.column_stack([left, right])

    return GazeTrace(
        world_gaze=world_gaze,
        head=np.clip(head, -OUTPUT_CLIP_DEG, OUTPUT_CLIP_DEG),
        eyes=np.clip(eyes, -OUTPUT_CLIP_DEG, OUTPUT_CLIP_DEG),
        fixation=fixation,
        onsets=np.asarray(onsets, dtype=int),
    )


# ---------------------------
# Audio
# ---------------------------
def speech_envelope(n_frames: int, onsets: np.ndarray, coupling: float, rng) -> np.ndarray:
    """Per-frame amplitude: syllable-like random modulation mixed with bursts that lead saccade onsets."""
    raw = rng.uniform(0.0, 1.0, size=n_frames)
    syllables = np.zeros(n_frames)
    s = 0.0
    for t in range(n_frames):
        s = 0.7 * s + 0.3 * raw[t]
        syllables[t] = s

    frames = np.arange(n_frames)
    bursts = np.zeros(n_frames)
    for o in onsets:
        bursts += np.exp(-0.5 * ((frames - (o - AUDIO_LEAD_FRAMES)) / 1.5) ** 2)
    bursts = np.minimum(bursts, 1.0)

    return 0.02 + 0.5 * (1.0 - coupling) * syllables + coupling * bursts


def synthesize_audio(envelope: np.ndarray, rng) -> AudioClip:
    n = len(envelope) * SAMPLES_PER_FRAME
    centers = (np.arange(len(envelope)) + 0.5) * SAMPLES_PER_FRAME
    amp = np.interp(np.arange(n), centers, envelope)
    samples = np.clip(0.3 * amp * rng.standard_normal(n), -0.99, 0.99)
    return AudioClip(samples=samples, sample_rate=AUDIO_SAMPLE_RATE)


# ---------------------------
# Sessions / corpus
# ---------------------------
def generate_session(profile: StyleProfile, seconds: float, rng: np.random.Generator,
                     speaker_id: str = "", session_id: str = ""):
    if seconds < 2:
        raise ValueError("sessions must last at least 2 seconds")
    n_frames = int(round(seconds * TARGET_FPS))
    trace = simulate_gaze(profile, n_frames, rng)

    values = np.column_stack([trace.head, trace.eyes])
    motion = MotionSequence(values=values, fps=TARGET_FPS, speaker_id=speaker_id, session_id=session_id)
    audio = synthesize_audio(speech_envelope(n_frames, trace.onsets, profile.speech_coupling, rng), rng)
    return motion, audio


def _write_session(out_dir: Path, profile: StyleProfile, seconds: float, seed_seq, speaker_id: str, session_id: str):
    rng = np.random.default_rng(seed_seq)
    motion, audio = generate_session(profile, seconds, rng, speaker_id, session_id)
    motion_path = out_dir / "motion" / f"{session_id}.csv"
    audio_path = out_dir / "audio" / f"{session_id}.wav"
    save_motion_file(motion_path, motion)
    save_wav(audio_path, audio)
    return ManifestEntry(motion_path=motion_path, audio_path=audio_path, speaker_id=speaker_id, session_id=session_id)


def generate_corpus(cfg: SynthConfig, out_dir, threads: int = 1) -> Path:
    cfg.validate()
    out_dir = Path(out_dir)
    (out_dir / "profiles").mkdir(parents=True, exist_ok=True)

    jobs = []
    for k, speaker_seq in enumerate(np.random.SeedSequence(cfg.seed).spawn(cfg.n_speakers)):
        speaker_id = f"spk{k + 1:02d}"
        profile_seq, *session_seqs = speaker_seq.spawn(1 + cfg.sessions_per_speaker)
        profile = sample_style_profile(np.random.default_rng(profile_seq))

        with open(out_dir / "profiles" / f"{speaker_id}.json", "w", encoding="utf-8") as f:
            json.dump(asdict(profile), f, indent=2, sort_keys=True)

        for j, seq in enumerate(session_seqs):
            jobs.append((profile, seq, speaker_id, f"{speaker_id}_ses{j + 1:02d}"))

    entries = Parallel(n_jobs=threads)(
        delayed(_write_session)(out_dir, profile, cfg.session_seconds, seq, spk, ses)
        for profile, seq, spk, ses in jobs
    )

    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, entries)
    logger.info("synthesized %d session(s) for %d speaker(s) under %s", len(entries), cfg.n_speakers, out_dir)
    return manifest
