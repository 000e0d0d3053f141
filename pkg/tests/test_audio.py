"""Acoustic front-end: framing, log-mel, stacking, noise mixing, WAV io."""

import numpy as np
import pytest

from avasr import audio
from avasr.audio import Waveform
from avasr.errors import InputError


def tone(freq, dur_s=1.0, amp=0.3, sr=16000):
    t = np.arange(int(dur_s * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t))


class TestFrameHann:
    def test_window_geometry(self):
        assert audio.WIN_SAMPLES == 400  # 25 ms at 16 kHz
        assert audio.HOP_SAMPLES == 160  # 10 ms

    def test_zero_input_zero_frames(self):
        frames = audio.frame_hann(Waveform(np.zeros(1600)))
        assert np.all(frames == 0.0)

    def test_one_second_frame_count(self):
        frames = audio.frame_hann(Waveform(np.zeros(16000)))
        # enumeration: frame i covers [160 i, 160 i + 400); count valid i
        expected = sum(1 for i in range(16000) if 160 * i + 400 <= 16000)
        assert frames.shape == (expected, 400)
        assert expected == 98

    def test_frame_placement(self):
        x = np.arange(900, dtype=np.float64)
        frames = audio.frame_hann(Waveform(x))
        w = audio.hann_window()
        assert np.array_equal(frames[2], x[320:720] * w)

    def test_too_short_rejected(self):
        with pytest.raises(InputError):
            audio.frame_hann(Waveform(np.zeros(399)))

    def test_shift_by_hop_shifts_frames(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(3200)
        a = audio.frame_hann(Waveform(x))
        b = audio.frame_hann(Waveform(x[160:]))
        assert np.array_equal(a[1:], b[: len(a) - 1])


class TestLogMel:
    def test_silence_hits_floor(self):
        frames = audio.frame_hann(Waveform(np.zeros(16000)))
        feats = audio.log_mel80(frames)
        assert feats.shape == (98, 80)
        assert np.all(feats == np.log(audio.LOG_FLOOR))

    def test_tone_lands_in_nearest_filter(self):
        centers = audio.mel_filter_centers()
        nearest = int(np.argmin(np.abs(centers - 1000.0)))
        feats = audio.log_mel80(audio.frame_hann(tone(1000.0)))
        hit = np.argmax(feats, axis=1)
        assert np.all(hit == nearest)

    def test_energy_scales_quadratically(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(4000)
        e1 = audio.mel_energies(audio.frame_hann(Waveform(x)))
        e2 = audio.mel_energies(audio.frame_hann(Waveform(3.0 * x)))
        assert np.allclose(e2, 9.0 * e1, rtol=1e-12)

    def test_filterbank_spans_band(self):
        fb = audio.mel_filterbank()
        assert fb.shape == (80, 257)
        bin_hz = np.arange(257) * 16000 / 512
        assert np.all(fb[:, bin_hz < 125.0] == 0.0)
        assert np.all(fb[:, bin_hz > 7500.0] == 0.0)
        assert np.all(fb.max(axis=1) > 0.5)  # sampled triangles, unit peaks
        assert np.all(fb.max(axis=1) <= 1.0 + 1e-12)
        # monotone center grid covering the band
        centers = audio.mel_filter_centers()
        assert np.all(np.diff(centers) > 0)
        assert centers[0] > 125.0 and centers[-1] < 7500.0


class TestStack3:
    def test_three_rows_concatenate(self):
        a, b, c = (np.full(80, v) for v in (1.0, 2.0, 3.0))
        out = audio.stack3(np.stack([a, b, c]))
        assert out.shape == (1, 240)
        assert np.array_equal(out[0], np.concatenate([a, b, c]))

    def test_remainder_dropped(self):
        out = audio.stack3(np.arange(7 * 80, dtype=np.float64).reshape(7, 80))
        assert out.shape == (2, 240)

    def test_round_trip(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((9, 80))
        stacked = audio.stack3(x)
        assert np.array_equal(stacked.reshape(-1, 80), x[:9])

    def test_too_few_rows(self):
        with pytest.raises(InputError):
            audio.stack3(np.zeros((2, 80)))

    def test_feature_dim_is_240(self):
        feats = audio.extract_features(tone(500.0))
        assert feats.data.shape[1] == 240
        assert feats.frame_period_ms == 30
        assert feats.data.shape[0] == 98 // 3


class TestMixAtSnr:
    def measured_snr(self, clean, scaled_noise):
        return 10.0 * np.log10(np.mean(clean ** 2) / np.mean(scaled_noise ** 2))

    def test_zero_db_power_match(self):
        clean, noise = tone(700.0), tone(333.0, amp=0.11)
        mixed = audio.mix_at_snr(clean, noise, 0.0)
        scaled = mixed.samples - clean.samples
        assert abs(np.mean(scaled ** 2) / np.mean(clean.samples ** 2) - 1.0) < 1e-9

    def test_20_db_is_hundredth_power(self):
        clean, noise = tone(700.0), tone(333.0, amp=0.8)
        mixed = audio.mix_at_snr(clean, noise, 20.0)
        scaled = mixed.samples - clean.samples
        ratio = np.mean(scaled ** 2) / np.mean(clean.samples ** 2)
        assert abs(ratio - 0.01) < 1e-11

    @pytest.mark.parametrize("snr", [0.0, 10.0, 20.0, -3.3, 7.5])
    def test_remeasured_within_hundredth_db(self, snr):
        rng = np.random.default_rng(3)
        clean = Waveform(0.2 * rng.standard_normal(8000))
        noise = Waveform(0.5 * rng.standard_normal(5000))
        mixed = audio.mix_at_snr(clean, noise, snr)
        scaled_noise = mixed.samples - clean.samples
        assert abs(self.measured_snr(clean.samples, scaled_noise) - snr) < 0.01

    def test_gain_consistency_under_common_scaling(self):
        rng = np.random.default_rng(4)
        clean = Waveform(rng.standard_normal(4000))
        noise = Waveform(rng.standard_normal(4000))
        m1 = audio.mix_at_snr(clean, noise, 10.0)
        m2 = audio.mix_at_snr(Waveform(2.0 * clean.samples), Waveform(2.0 * noise.samples), 10.0)
        assert np.allclose(m2.samples, 2.0 * m1.samples, rtol=1e-12)

    def test_zero_power_inputs_rejected(self):
        with pytest.raises(InputError):
            audio.mix_at_snr(Waveform(np.zeros(1000)), tone(200.0, 0.1), 0.0)
        with pytest.raises(InputError):
            audio.mix_at_snr(tone(200.0, 0.1), Waveform(np.zeros(1000)), 0.0)

    def test_short_noise_is_tiled(self):
        clean = tone(500.0, 0.5)
        noise = Waveform(np.ones(700) * 0.1)
        mixed = audio.mix_at_snr(clean, noise, 0.0)
        assert len(mixed.samples) == len(clean.samples)


class TestOverlap:
    def test_zero_distractor_no_change(self):
        base = tone(440.0, 1.0)
        out = audio.overlap_utterance(base, Waveform(np.zeros(800)), at_start=True)
        assert np.array_equal(out.samples, base.samples)

    def test_five_second_cap(self):
        with pytest.raises(InputError):
            audio.overlap_utterance(tone(440.0, 6.0), tone(300.0, 5.0))

    def test_longer_than_base_rejected(self):
        with pytest.raises(InputError):
            audio.overlap_utterance(tone(440.0, 0.5), tone(300.0, 1.0))

    @pytest.mark.parametrize("at_start", [True, False])
    def test_overlap_region_sums(self, at_start):
        base, d = tone(440.0, 1.0), tone(250.0, 0.25)
        out = audio.overlap_utterance(base, d, at_start=at_start)
        n = len(d.samples)
        if at_start:
            region, rest = out.samples[:n], out.samples[n:]
            b_region, b_rest = base.samples[:n], base.samples[n:]
        else:
            region, rest = out.samples[-n:], out.samples[:-n]
            b_region, b_rest = base.samples[-n:], base.samples[:-n]
        assert np.array_equal(region, b_region + d.samples)
        assert np.array_equal(rest, b_rest)


class TestWavIo:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        w = Waveform(np.clip(0.5 * rng.standard_normal(2000), -0.9, 0.9))
        path = tmp_path / "clip.wav"
        audio.write_wav(path, w)
        back = audio.read_wav(path)
        assert back.sample_rate == 16000
        assert np.max(np.abs(back.samples - w.samples)) <= 0.5 / 32768.0 + 1e-12

    def test_full_scale_clips_by_one_lsb(self, tmp_path):
        path = tmp_path / "fs.wav"
        audio.write_wav(path, Waveform(np.array([1.0] * 500)))
        back = audio.read_wav(path)
        assert np.max(np.abs(back.samples - 1.0)) <= 1.0 / 32768.0

    def test_rejects_wrong_rate(self, tmp_path):
        import wave
        path = tmp_path / "bad.wav"
        with wave.open(str(path), "wb") as f:
            f.setnchannels(1)
            f.setsampwidth(2)
            f.setframerate(8000)
            f.writeframes(b"\x00\x00" * 100)
        with pytest.raises(InputError):
            audio.read_wav(path)
