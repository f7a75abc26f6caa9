import logging

import librosa
import numpy as np
from scipy.signal import argrelextrema
from sklearn.metrics import accuracy_score, silhouette_score
from sklearn.neighbors import NearestCentroid

from config.constants import (
    BEAT_SIGMA_FRAMES,
    CHANNEL_GROUPS,
    COMP_BAND_HIGH,
    COMP_BAND_LOW,
    COMP_STABLE_BELOW,
    IDT_DISPERSION_DEG,
    IDT_MIN_FRAMES,
    TARGET_FPS,
)
from models.style_encoder import cosine_sim

logger = logging.getLogger(__name__)

# gaze block column order: l_eye_pitch, l_eye_yaw, r_eye_pitch, r_eye_yaw
_PITCH = [0, 2]
_YAW = [1, 3]

ONSET_DELTA = 0.1
ONSET_WAIT_FRAMES = 2


# ---------------------------
# Fixation / saccade labeling
# ---------------------------
def dispersion(gaze_window: np.ndarray) -> float:
    x = gaze_window[:, _YAW]
    y = gaze_window[:, _PITCH]
    return float(x.max() - x.min() + y.max() - y.min())


def idt_labels(gaze: np.ndarray, window_len: int = IDT_MIN_FRAMES, disp_max: float = IDT_DISPERSION_DEG,
               min_dur: int = IDT_MIN_FRAMES) -> np.ndarray:
    """Dispersion-threshold labeling; True marks fixation frames.

    A window of ``window_len`` frames opens at i. If its dispersion is within
    ``disp_max`` it grows frame by frame while the dispersion stays within the
    threshold, all its frames become fixation and the sweep restarts after it;
    otherwise the window slides by one frame.
    """
    gaze = np.asarray(gaze, dtype=np.float64)
    T = len(gaze)
    if gaze.ndim != 2 or gaze.shape[1] != 4:
        raise ValueError(f"gaze must be T×4, got {gaze.shape}")
    if window_len < min_dur:
        raise ValueError("window_len must be >= min_dur")
    if T < min_dur:
        raise ValueError(f"sequence of {T} frames is shorter than min_dur={min_dur}")

    labels = np.zeros(T, dtype=bool)
    xs = gaze[:, _YAW]
    ys = gaze[:, _PITCH]

    i = 0
    while i + window_len <= T:
        j = i + window_len
        x_lo, x_hi = xs[i:j].min(), xs[i:j].max()
        y_lo, y_hi = ys[i:j].min(), ys[i:j].max()
        if (x_hi - x_lo) + (y_hi - y_lo) > disp_max:
            i += 1
            continue

        while j < T:
            nx_lo, nx_hi = min(x_lo, xs[j].min()), max(x_hi, xs[j].max())
            ny_lo, ny_hi = min(y_lo, ys[j].min()), max(y_hi, ys[j].max())
            if (nx_hi - nx_lo) + (ny_hi - ny_lo) > disp_max:
                break
            x_lo, x_hi, y_lo, y_hi = nx_lo, nx_hi, ny_lo, ny_hi
            j += 1

        labels[i:j] = True
        i = j
    return labels


def fixation_ratio(labels) -> float:
    labels = np.asarray(labels, dtype=bool)
    if labels.size == 0:
        raise ValueError("fixation ratio of an empty label series")
    return float(labels.mean())


# ---------------------------
# Gaze-head coordination
# ---------------------------
def velocities(values: np.ndarray) -> np.ndarray:
    """°/s from per-frame differences at 25 FPS."""
    return TARGET_FPS * np.diff(np.asarray(values, dtype=np.float64), axis=0)


def compensation_score(head_vel: np.ndarray, eye_vel: np.ndarray, normalize_head: bool = False) -> float:
    head_vel = np.asarray(head_vel, dtype=np.float64)
    eye_vel = np.asarray(eye_vel, dtype=np.float64)
    if head_vel.shape != eye_vel.shape:
        raise ValueError(f"head velocity {head_vel.shape} vs eye velocity {eye_vel.shape}")
    if len(head_vel) == 0:
        raise ValueError("compensation score of an empty sequence")

    h_norm = np.linalg.norm(head_vel, axis=1)
    e_norm = np.linalg.norm(eye_vel, axis=1)
    g_norm = np.linalg.norm(head_vel + eye_vel, axis=1)

    score = np.zeros(len(head_vel))

    stable = g_norm < COMP_STABLE_BELOW
    score[stable] = -(h_norm[stable] / COMP_BAND_HIGH if normalize_head else h_norm[stable])

    band = (g_norm >= COMP_BAND_LOW) & (g_norm <= COMP_BAND_HIGH) & (h_norm > 0) & (e_norm > 0)
    cross = head_vel[:, 0] * eye_vel[:, 1] - head_vel[:, 1] * eye_vel[:, 0]
    dot = np.sum(head_vel * eye_vel, axis=1)
    score[band] = -np.cos(np.arctan2(cross[band], dot[band]))

    return float(score.mean())


def head_eye_velocities(values: np.ndarray):
    """(head pitch/yaw, binocular-mean eye pitch/yaw) velocities of a T×7 sequence."""
    values = np.asarray(values, dtype=np.float64)
    head = values[:, [0, 1]]
    eye = (values[:, [3, 4]] + values[:, [5, 6]]) / 2.0
    return velocities(head), velocities(eye)


def gaze_pattern(values: np.ndarray, normalize_head: bool = False) -> dict:
    values = np.asarray(values, dtype=np.float64)
    fix = fixation_ratio(idt_labels(values[:, CHANNEL_GROUPS["gaze"]]))
    head_vel, eye_vel = head_eye_velocities(values)
    return {
        "fixation": fix,
        "saccades": 1.0 - fix,
        "compScore": compensation_score(head_vel, eye_vel, normalize_head),
    }


def sim_with_gt(fix_gt: float, fix_pred: float, comp_gt: float, comp_pred: float) -> float:
    return 1.0 - (abs(fix_gt - fix_pred) + abs(comp_gt - comp_pred))


# ---------------------------
# Frame-wise errors
# ---------------------------
def _select(pred, gt, channels):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    idx = CHANNEL_GROUPS[channels] if isinstance(channels, str) else list(channels)
    return pred[:, idx], gt[:, idx]


def mae(pred, gt, channels="all") -> float:
    p, g = _select(pred, gt, channels)
    return float(np.mean(np.abs(p - g)))


def vel_error(pred, gt, channels="all") -> float:
    p, g = _select(pred, gt, channels)
    if len(p) < 2:
        raise ValueError("velocity error needs at least 2 frames")
    return float(np.mean(np.abs(np.diff(p, axis=0) - np.diff(g, axis=0))))


def motion_energy(values: np.ndarray) -> float:
    return float(np.sum(np.diff(values, axis=0) ** 2))


def mee(pred, gt, channels="all") -> float:
    p, g = _select(pred, gt, channels)
    if len(p) < 2:
        raise ValueError("motion energy error needs at least 2 frames")
    return abs(motion_energy(p) - motion_energy(g))


# ---------------------------
# Beat alignment
# ---------------------------
def motion_beats(values: np.ndarray) -> np.ndarray:
    """Frames where the 7-channel speed has a strict local minimum below its median."""
    speed = np.linalg.norm(np.diff(np.asarray(values, dtype=np.float64), axis=0), axis=1)
    minima = argrelextrema(speed, np.less)[0]
    minima = minima[speed[minima] < np.median(speed)]
    return minima + 1


def audio_beats(frames: np.ndarray) -> np.ndarray:
    """Onset frames of a (T, F) log-mel sequence: spectral-flux envelope, then local-maximum peak picking."""
    S = np.asarray(frames, dtype=np.float64).T
    envelope = librosa.onset.onset_strength(S=S, lag=1, max_size=1, center=False)
    peak = envelope.max()
    if peak <= 0:
        return np.array([], dtype=int)
    return librosa.util.peak_pick(envelope / peak, pre_max=1, post_max=1, pre_avg=3, post_avg=3,
                                  delta=ONSET_DELTA, wait=ONSET_WAIT_FRAMES)


def beat_alignment_score(m_beats, a_beats, sigma: float = BEAT_SIGMA_FRAMES) -> float:
    m_beats = np.asarray(m_beats, dtype=np.float64)
    a_beats = np.asarray(a_beats, dtype=np.float64)
    if len(m_beats) == 0 or len(a_beats) == 0:
        return 0.0
    dist = np.min(np.abs(m_beats[:, None] - a_beats[None, :]), axis=1)
    return float(np.mean(np.exp(-dist ** 2 / (2.0 * sigma ** 2))))


def beat_alignment(motion_values: np.ndarray, feat_frames: np.ndarray, sigma: float = BEAT_SIGMA_FRAMES) -> float:
    if len(motion_values) < 3 or len(feat_frames) < 3:
        raise ValueError("beat alignment needs at least 3 frames of motion and audio")
    return beat_alignment_score(motion_beats(motion_values), audio_beats(feat_frames), sigma)


# ---------------------------
# Style
# ---------------------------
def style_cosine_error(pred: np.ndarray, gt: np.ndarray, encoder, window: int | None = None) -> float:
    """Mean of 1 - cos(encode(gt window), encode(pred window)) over aligned non-overlapping windows.

    ``encoder`` maps a (B, M, 7) batch in degrees to (B, d) embeddings.
    """
    M = window or encoder.window
    n = min(len(pred), len(gt))
    if n < M:
        raise ValueError(f"sequences of {n} frames are shorter than the style window {M}")

    starts = range(0, n - M + 1, M)
    e_gt = encoder(np.stack([gt[s:s + M] for s in starts]))
    e_pred = encoder(np.stack([pred[s:s + M] for s in starts]))
    return float(np.mean([1.0 - cosine_sim(a, b) for a, b in zip(e_gt, e_pred)]))


def silhouette(embeddings: np.ndarray, labels) -> float:
    labels = np.asarray(labels)
    uniq, counts = np.unique(labels, return_counts=True)
    if len(uniq) < 2:
        raise ValueError("silhouette needs at least 2 labels")
    if np.any(counts < 2):
        raise ValueError(f"singleton cluster(s): {uniq[counts < 2].tolist()}")
    return float(silhouette_score(embeddings, labels, metric="euclidean"))


def nearest_centroid_accuracy(train_emb, train_labels, test_emb, test_labels) -> dict:
    clf = NearestCentroid().fit(train_emb, train_labels)
    n_classes = len(np.unique(train_labels))
    return {
        "accuracy": float(accuracy_score(test_labels, clf.predict(test_emb))),
        "chance": 1.0 / n_classes,
    }
