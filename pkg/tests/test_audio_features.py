import numpy as np
import pytest
from scipy.io import wavfile

from corpus.audio_features import (
    AlignmentError,
    AudioClip,
    AudioTooShortError,
    FeatureFormatError,
    FeatureSequence,
    MelConfig,
    UnsupportedAudioError,
    align_features,
    load_features,
    load_wav,
    log_mel,
    mel_band_edges,
    save_features,
    save_wav,
)
from training.checkpoint import write_tensor_file


class TestLogMel:
    def test_silence_hits_the_floor(self):
        feats = log_mel(AudioClip(np.zeros(16000)))
        assert feats.frames.shape == (25, 26)
        np.testing.assert_allclose(feats.frames, np.log(1e-6))

    def test_sine_peaks_in_its_band(self):
        cfg = MelConfig()
        k = 10
        f = mel_band_edges(cfg)[k + 1]
        t = np.arange(16000) / 16000
        feats = log_mel(AudioClip(0.5 * np.sin(2 * np.pi * f * t)))
        assert int(np.argmax(feats.frames.mean(axis=0))) == k

    def test_too_short(self):
        with pytest.raises(AudioTooShortError):
            log_mel(AudioClip(np.zeros(100)))

    def test_unalignable_rate(self):
        with pytest.raises(UnsupportedAudioError):
            MelConfig.for_sample_rate(22050)

    def test_other_rate_keeps_25fps(self):
        feats = log_mel(AudioClip(np.zeros(48000), sample_rate=48000))
        assert len(feats) == 25

    def test_deterministic(self, rng):
        clip = AudioClip(rng.uniform(-0.5, 0.5, size=8000))
        np.testing.assert_array_equal(log_mel(clip).frames, log_mel(clip).frames)

    def test_gain_raises_every_band(self, rng):
        noise = rng.uniform(-1.0, 1.0, size=16000)
        quiet = log_mel(AudioClip(0.05 * noise)).frames
        loud = log_mel(AudioClip(0.5 * noise)).frames
        assert np.all(loud > quiet)

    def test_shift_by_one_frame_shifts_rows(self, rng):
        x = rng.uniform(-0.5, 0.5, size=16000)
        samples_per_frame = 16000 // 25
        base = log_mel(AudioClip(x)).frames
        shifted = log_mel(AudioClip(np.concatenate([np.zeros(samples_per_frame), x]))).frames
        assert len(shifted) == len(base) + 1
        np.testing.assert_allclose(shifted[1:], base, atol=1e-9)


class TestAlign:
    def test_truncates_one_extra(self, rng):
        feats = FeatureSequence(rng.normal(size=(101, 4)))
        out = align_features(feats, 100)
        assert len(out) == 100
        np.testing.assert_array_equal(out.frames, feats.frames[:100])

    def test_pads_with_last_frame(self, rng):
        feats = FeatureSequence(rng.normal(size=(98, 4)))
        out = align_features(feats, 100)
        np.testing.assert_array_equal(out.frames[-1], feats.frames[-1])
        np.testing.assert_array_equal(out.frames[-2], feats.frames[-1])

    def test_rejects_large_mismatch(self):
        with pytest.raises(AlignmentError):
            align_features(FeatureSequence(np.zeros((97, 4))), 100)


class TestFiles:
    def test_wav_round_trip(self, tmp_path, rng):
        clip = AudioClip(rng.uniform(-0.5, 0.5, size=1600))
        save_wav(tmp_path / "a.wav", clip)
        back = load_wav(tmp_path / "a.wav")
        assert back.sample_rate == 16000
        np.testing.assert_allclose(back.samples, clip.samples, atol=1 / 32768)

    def test_feature_round_trip(self, tmp_path, rng):
        feats = FeatureSequence(rng.normal(size=(30, 26)).astype(np.float32))
        save_features(tmp_path / "f.feat", feats)
        np.testing.assert_array_equal(load_features(tmp_path / "f.feat").frames, feats.frames)

    def test_precomputed_width(self, tmp_path):
        save_features(tmp_path / "f.feat", FeatureSequence(np.zeros((10, 768), dtype=np.float32)))
        assert load_features(tmp_path / "f.feat").feature_dim == 768

    def test_rank3_rejected(self, tmp_path):
        write_tensor_file(tmp_path / "f.feat", {"features": np.zeros((2, 3, 4), dtype=np.float32)})
        with pytest.raises(FeatureFormatError):
            load_features(tmp_path / "f.feat")

    def test_garbage_rejected(self, tmp_path):
        (tmp_path / "f.feat").write_bytes(b"abc")
        with pytest.raises(FeatureFormatError):
            load_features(tmp_path / "f.feat")


class TestLoadWav:
    def test_scales_by_full_scale(self, tmp_path):
        wavfile.write(tmp_path / "a.wav", 16000, np.array([32767, -32768, 0, 16384], dtype=np.int16))
        clip = load_wav(tmp_path / "a.wav")
        np.testing.assert_array_equal(clip.samples, [32767 / 32768, -1.0, 0.0, 0.5])

    def test_rejects_stereo(self, tmp_path):
        wavfile.write(tmp_path / "a.wav", 16000, np.zeros((100, 2), dtype=np.int16))
        with pytest.raises(UnsupportedAudioError, match="mono"):
            load_wav(tmp_path / "a.wav")

    @pytest.mark.parametrize("dtype", [np.int32, np.float32, np.uint8])
    def test_rejects_other_sample_formats(self, tmp_path, dtype):
        wavfile.write(tmp_path / "a.wav", 16000, np.zeros(100, dtype=dtype))
        with pytest.raises(UnsupportedAudioError, match="16-bit"):
            load_wav(tmp_path / "a.wav")
