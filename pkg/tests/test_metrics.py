import numpy as np
import pytest

from evaluation.metrics import (
    audio_beats,
    beat_alignment,
    beat_alignment_score,
    compensation_score,
    fixation_ratio,
    idt_labels,
    mae,
    mee,
    nearest_centroid_accuracy,
    silhouette,
    sim_with_gt,
    style_cosine_error,
    vel_error,
)


def _dispersion(window):
    x = window[:, [1, 3]]
    y = window[:, [0, 2]]
    return (x.max() - x.min()) + (y.max() - y.min())


def _brute_force_idt(gaze, disp_max=3.5, min_dur=3):
    """Recomputes each candidate window's dispersion from scratch."""
    T = len(gaze)
    labels = np.zeros(T, dtype=bool)
    i = 0
    while i + min_dur <= T:
        if _dispersion(gaze[i:i + min_dur]) > disp_max:
            i += 1
            continue
        j = i + min_dur
        while j < T and _dispersion(gaze[i:j + 1]) <= disp_max:
            j += 1
        labels[i:j] = True
        i = j
    return labels


def _random_gaze(rng, T):
    steps = rng.normal(scale=0.6, size=(T, 2))
    jumps = rng.random(T) < 0.1
    steps[jumps] += rng.normal(scale=8.0, size=(jumps.sum(), 2))
    mean = np.cumsum(steps, axis=0)
    noise = rng.normal(scale=0.2, size=(T, 4))
    return np.column_stack([mean, mean]) + noise


def _run_lengths(labels):
    edges = np.diff(np.concatenate([[0], labels.astype(int), [0]]))
    return np.where(edges == -1)[0] - np.where(edges == 1)[0]


class TestIdt:
    def test_constant_gaze(self):
        labels = idt_labels(np.zeros((10, 4)))
        assert labels.all()
        assert fixation_ratio(labels) == 1.0

    def test_threshold_arithmetic(self):
        gaze = np.zeros((3, 4))
        gaze[:, 1] = gaze[:, 3] = [0.0, 1.0, 2.0]
        gaze[:, 0] = gaze[:, 2] = [0.0, 1.4, 0.7]
        assert idt_labels(gaze).all()
        gaze[2, 3] = 2.2
        assert not idt_labels(gaze).any()

    def test_too_short(self):
        with pytest.raises(ValueError):
            idt_labels(np.zeros((2, 4)))

    def test_matches_oracle_on_short_sequences(self, rng):
        for T in range(3, 51):
            for _ in range(5):
                gaze = _random_gaze(rng, T)
                np.testing.assert_array_equal(idt_labels(gaze), _brute_force_idt(gaze))

    def test_matches_oracle_on_long_sequences(self, rng):
        for _ in range(200):
            gaze = _random_gaze(rng, 500)
            labels = idt_labels(gaze)
            np.testing.assert_array_equal(labels, _brute_force_idt(gaze))
            assert np.all(_run_lengths(labels) >= 3)


class TestFixationRatio:
    def test_counts(self):
        assert fixation_ratio([True] * 6 + [False] * 4) == pytest.approx(0.6)
        assert fixation_ratio([False] * 3) == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            fixation_ratio([])


class TestCompensation:
    def test_still(self):
        assert compensation_score(np.zeros((5, 2)), np.zeros((5, 2))) == 0.0

    def test_opposed_in_band(self):
        assert compensation_score([[40.0, 0.0]], [[-10.0, 0.0]]) == pytest.approx(1.0)

    def test_gap_band(self):
        assert compensation_score([[22.0, 0.0]], [[0.0, 0.0]]) == 0.0

    def test_stable_branch(self):
        assert compensation_score([[10.0, 0.0]], [[0.0, 0.0]]) == pytest.approx(-10.0)
        assert compensation_score([[10.0, 0.0]], [[0.0, 0.0]], normalize_head=True) == pytest.approx(-10.0 / 90.0)

    def test_rotation_invariant(self, rng):
        h = rng.normal(scale=30, size=(200, 2))
        e = rng.normal(scale=30, size=(200, 2))
        a = 0.7
        R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        assert compensation_score(h @ R.T, e @ R.T) == pytest.approx(compensation_score(h, e))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            compensation_score(np.zeros((3, 2)), np.zeros((4, 2)))


class TestSimilarity:
    def test_values(self):
        assert sim_with_gt(0.8, 0.8, -0.3, -0.3) == 1.0
        assert sim_with_gt(0.8, 0.7, 0.3, 0.35) == pytest.approx(0.85)

    def test_not_clamped(self):
        assert sim_with_gt(1.0, 0.0, 1.0, -1.0) == pytest.approx(-2.0)


class TestFrameErrors:
    def test_identity(self, rng):
        gt = rng.normal(size=(20, 7))
        assert mae(gt, gt) == vel_error(gt, gt) == mee(gt, gt) == 0.0

    def test_offset(self, rng):
        gt = rng.normal(size=(20, 7))
        assert mae(gt + 1.0, gt) == pytest.approx(1.0)
        assert vel_error(gt + 1.0, gt) == pytest.approx(0.0, abs=1e-12)

    def test_energy_hand_case(self):
        gt = np.zeros((3, 7))
        pred = gt.copy()
        pred[1, 0] = 1.0
        assert mee(pred, gt) == pytest.approx(2.0)
        assert mee(gt, pred) == pytest.approx(2.0)

    def test_channel_groups(self):
        gt = np.zeros((4, 7))
        pred = gt.copy()
        pred[:, :3] = 2.0
        assert mae(pred, gt, "head") == pytest.approx(2.0)
        assert mae(pred, gt, "gaze") == 0.0
        assert mae(pred, gt, "all") == pytest.approx(6.0 / 7.0)


class TestBeatAlignment:
    def test_score(self):
        assert beat_alignment_score([5, 12], [5, 12]) == 1.0
        assert beat_alignment_score([10], [13, 30]) == pytest.approx(np.exp(-0.5))
        assert beat_alignment_score([], [3]) == 0.0

    def test_still_motion_has_no_beats(self, rng):
        assert beat_alignment(np.zeros((30, 7)), rng.normal(size=(30, 4))) == 0.0

    def test_audio_onset_on_energy_step(self):
        frames = np.zeros((30, 26))
        frames[10:] = 2.0
        np.testing.assert_array_equal(audio_beats(frames), [10])

    def test_flat_audio_has_no_onsets(self):
        assert len(audio_beats(np.full((30, 26), -5.0))) == 0

    def test_range(self, rng):
        bas = beat_alignment(np.cumsum(rng.normal(size=(100, 7)), axis=0), rng.normal(size=(100, 26)))
        assert 0.0 <= bas <= 1.0


class _MeanEncoder:
    window = 4

    def __call__(self, windows):
        return np.asarray(windows).mean(axis=1)


class TestStyleError:
    def test_identity(self, rng):
        gt = rng.normal(size=(12, 7)) + 1.0
        assert style_cosine_error(gt, gt, _MeanEncoder()) == pytest.approx(0.0, abs=1e-12)

    def test_antipodal(self, rng):
        gt = rng.normal(size=(12, 7)) + 1.0
        assert style_cosine_error(-gt, gt, _MeanEncoder()) == pytest.approx(2.0)

    def test_too_short(self, rng):
        with pytest.raises(ValueError):
            style_cosine_error(np.ones((3, 7)), np.ones((3, 7)), _MeanEncoder())


class TestClusters:
    def test_separated(self, rng):
        emb = np.vstack([rng.normal(scale=0.1, size=(10, 3)), 100 + rng.normal(scale=0.1, size=(10, 3))])
        labels = ["a"] * 10 + ["b"] * 10
        assert silhouette(emb, labels) > 0.9
        assert silhouette(emb, ["b"] * 10 + ["a"] * 10) == pytest.approx(silhouette(emb, labels))

    def test_degenerate(self):
        assert silhouette(np.zeros((4, 3)), ["a", "a", "b", "b"]) <= 0.0

    def test_singleton(self, rng):
        with pytest.raises(ValueError):
            silhouette(rng.normal(size=(3, 2)), ["a", "a", "b"])

    def test_nearest_centroid(self, rng):
        train = np.vstack([rng.normal(size=(10, 2)), 50 + rng.normal(size=(10, 2))])
        test = np.vstack([rng.normal(size=(5, 2)), 50 + rng.normal(size=(5, 2))])
        out = nearest_centroid_accuracy(train, ["a"] * 10 + ["b"] * 10, test, ["a"] * 5 + ["b"] * 5)
        assert out == {"accuracy": 1.0, "chance": 0.5}
