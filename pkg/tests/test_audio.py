import math

import numpy as np
import pytest

from modfusion.audio import (AudioError, Waveform, expected_frames, extract_mel, frame_signal, load_mel_csv,
                             mel_center_frequencies, mel_db, mel_filterbank, preemphasis, read_wav,
                             reduce_frames, save_mel_csv, stft_magnitude, write_wav)
from modfusion.config import ConfigError, MelConfig

CFG = MelConfig()


def _wave(x, sr=22050):
    return Waveform(np.asarray(x, dtype=np.float64), sr)


class TestPreemphasis:
    def test_zero_coeff(self):
        x = np.random.default_rng(0).normal(size=50)
        np.testing.assert_array_equal(preemphasis(_wave(x), 0.0).samples, x)

    def test_constant(self):
        out = preemphasis(_wave(np.full(5, 2.0)), 0.97).samples
        np.testing.assert_allclose(out, [2.0] + [0.06] * 4, atol=1e-12)

    def test_recurrence_oracle(self):
        x = np.random.default_rng(1).normal(size=200)
        out = preemphasis(_wave(x), 0.97).samples
        ref = [x[0]] + [x[n] - 0.97 * x[n - 1] for n in range(1, len(x))]
        np.testing.assert_allclose(out, ref, atol=1e-12)


class TestStft:
    def test_frame_count(self):
        for n in (1102, 5000, 22050):
            assert stft_magnitude(_wave(np.zeros(n)), CFG).shape == (1 + n // CFG.hop, CFG.n_fft // 2 + 1)

    def test_silence(self):
        assert np.all(stft_magnitude(_wave(np.zeros(4000)), CFG) == 0.0)

    def test_too_short(self):
        with pytest.raises(AudioError):
            stft_magnitude(_wave(np.zeros(100)), CFG)

    def test_bin_centre_sine(self):
        k = 93
        f = k * CFG.sample_rate / CFG.n_fft
        t = np.arange(8000) / CFG.sample_rate
        mag = stft_magnitude(_wave(np.sin(2 * np.pi * f * t)), CFG)
        # interior frames, away from reflect padding
        assert np.all(mag[3:-3].argmax(axis=1) == k)

    def test_matches_dft_definition_on_one_frame(self):
        x = np.random.default_rng(2).normal(size=6000)
        frame = frame_signal(_wave(x), CFG)[5]
        n = CFG.n_fft
        ks = np.arange(0, n // 2 + 1, 37)
        direct = np.array([abs(sum(frame[m] * complex(math.cos(-2 * math.pi * k * m / n),
                                                      math.sin(-2 * math.pi * k * m / n))
                                   for m in range(0, n))) for k in ks[:6]])
        mag = stft_magnitude(_wave(x), CFG)[5]
        np.testing.assert_allclose(mag[ks[:6]], direct, rtol=1e-9, atol=1e-9)

    def test_parseval(self):
        x = np.random.default_rng(3).normal(size=5000)
        frame = frame_signal(_wave(x), CFG)[4]
        spec = np.fft.fft(frame)
        assert np.isclose((frame ** 2).sum(), (np.abs(spec) ** 2).sum() / CFG.n_fft)


class TestFilterbank:
    def test_shape_and_peaks(self):
        bank = mel_filterbank(CFG)
        assert bank.shape == (80, CFG.n_fft // 2 + 1)
        assert np.all(bank >= 0) and bank.max() <= 1.0 + 1e-12
        assert np.all(bank.sum(axis=1) > 0)

    def test_zero_width_filter(self):
        with pytest.raises(AudioError, match="zero width"):
            mel_filterbank(MelConfig(n_fft=64, win=64))

    def test_pure_tone_energy_concentrates(self):
        centres = mel_center_frequencies(CFG)
        t = np.arange(22050) / CFG.sample_rate
        for band in (20, 40, 60):
            tone = _wave(0.5 * np.sin(2 * np.pi * centres[band] * t))
            power = (10 ** (mel_db(tone, CFG) / 20.0))[5:-5] ** 2
            top2 = np.sort(power, axis=1)[:, -2:].sum(axis=1)
            assert np.all(top2 / power.sum(axis=1) >= 0.6)
            assert np.all(np.abs(power.argmax(axis=1) - band) <= 1)


class TestPipeline:
    def test_one_second(self):
        sig = np.random.default_rng(0).normal(scale=0.1, size=22050)
        full = mel_db(_wave(sig), CFG)
        assert full.shape[0] == 80
        assert extract_mel(_wave(sig), CFG).shape == (5, 80)

    def test_silence_floor(self):
        assert np.all(extract_mel(_wave(np.zeros(5000)), CFG) == 0.0)

    @pytest.mark.parametrize("t, rows", [(64, [0, 16, 32, 48]), (16, [0]), (17, [0, 16])])
    def test_reduce(self, t, rows):
        spec = np.arange(t)[:, None] * np.ones((1, 80))
        np.testing.assert_array_equal(reduce_frames(spec, 16)[:, 0], rows)

    def test_random_lengths(self):
        rng = np.random.default_rng(4)
        for n in rng.integers(CFG.win, 30000, size=10):
            out = extract_mel(_wave(rng.normal(scale=0.1, size=n)), CFG)
            assert out.shape == (math.ceil((1 + n // CFG.hop) / 16), 80) == (expected_frames(n, CFG), 80)
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_gain_raises_db_by_20(self):
        sig = np.random.default_rng(5).normal(scale=0.01, size=6000)
        lo, hi = mel_db(_wave(sig), CFG), mel_db(_wave(10 * sig), CFG)
        open_bins = lo > CFG.db_floor + 1e-9
        assert open_bins.mean() > 0.9
        np.testing.assert_allclose((hi - lo)[open_bins], 20.0, atol=1e-9)

    def test_deterministic(self):
        sig = np.random.default_rng(6).normal(size=7000)
        assert extract_mel(_wave(sig), CFG).tobytes() == extract_mel(_wave(sig.copy()), CFG).tobytes()

    def test_sample_rate_mismatch(self):
        with pytest.raises(AudioError, match="16000"):
            extract_mel(Waveform(np.zeros(5000), 16000), CFG)

    def test_n_mels_fixed(self):
        with pytest.raises(ConfigError):
            MelConfig(n_mels=40)


class TestFiles:
    def test_wav_round_trip(self, tmp_path):
        sig = np.sin(np.linspace(0, 40, 3000)) * 0.5
        write_wav(tmp_path / "a.wav", _wave(sig))
        back = read_wav(tmp_path / "a.wav")
        assert back.sample_rate == 22050
        np.testing.assert_allclose(back.samples, sig, atol=1e-4)
        assert read_wav((tmp_path / "a.wav").read_bytes()).samples.tobytes() == back.samples.tobytes()

    def test_stereo_averaged(self, tmp_path):
        import wave
        left, right = np.full(100, 1000, "<i2"), np.full(100, 3000, "<i2")
        with wave.open(str(tmp_path / "s.wav"), "wb") as fh:
            fh.setnchannels(2)
            fh.setsampwidth(2)
            fh.setframerate(22050)
            fh.writeframes(np.stack([left, right], axis=1).tobytes())
        np.testing.assert_allclose(read_wav(tmp_path / "s.wav").samples, 2000 / 32768)

    def test_corrupt_wav(self):
        with pytest.raises(AudioError):
            read_wav(b"RIFF not really a wav")

    def test_mel_csv_round_trip(self, tmp_path):
        spec = np.random.default_rng(7).random((3, 80))
        save_mel_csv(tmp_path / "m.csv", spec)
        assert load_mel_csv(tmp_path / "m.csv").tobytes() == spec.tobytes()

    def test_mel_csv_wrong_width(self, tmp_path):
        save_mel_csv(tmp_path / "m.csv", np.zeros((2, 10)))
        with pytest.raises(AudioError):
            load_mel_csv(tmp_path / "m.csv")
