"""Acoustic front-end: 16 kHz waveforms to 240-dimensional log-mel stacks at
one frame per 30 ms, plus the additive-noise and utterance-overlap mixers
used by the evaluation conditions.

Fixed choices, recorded here because they are configuration, not physics:
512-point FFT (next power of two above the 400-sample window), 80 triangular
mel filters with unit peaks spanning 125-7500 Hz on the Slaney mel scale
(linear below 1 kHz, logarithmic above), natural log with floor 1e-10,
periodic Hann window.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import InputError

SAMPLE_RATE = 16000
WIN_SAMPLES = 400     # 25 ms
HOP_SAMPLES = 160     # 10 ms
N_FFT = 512
N_MELS = 80
MEL_FMIN = 125.0
MEL_FMAX = 7500.0
LOG_FLOOR = 1e-10
STACK = 3
FRAME_PERIOD_MS = 30  # after stacking: exact 30 ms period ("33.3 Hz")
FEATURE_DIM = N_MELS * STACK


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InputError(f"waveform must be single-channel, got shape {self.samples.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise InputError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("waveform contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class AcousticFeatures:
    """(T, 240) log-mel stack, one row per 30 ms."""
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] != FEATURE_DIM:
            raise InputError(f"acoustic features must be (T, {FEATURE_DIM}), got {self.data.shape}")

    frame_period_ms = FRAME_PERIOD_MS


def hann_window(n: int = WIN_SAMPLES) -> np.ndarray:
    # periodic form, standard for STFT analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_hann(w: Waveform) -> np.ndarray:
    """Slice into 400-sample windows every 160 samples and apply the Hann
    window. Frame i covers samples [160*i, 160*i+400); the trailing partial
    frame is dropped."""
    x = w.samples
    if len(x) < WIN_SAMPLES:
        raise InputError(f"need at least {WIN_SAMPLES} samples, got {len(x)}")
    n_frames = (len(x) - WIN_SAMPLES) // HOP_SAMPLES + 1
    idx = HOP_SAMPLES * np.arange(n_frames)[:, None] + np.arange(WIN_SAMPLES)[None, :]
    return x[idx] * hann_window()


_MEL_BREAK_HZ = 1000.0
_MEL_BREAK = 15.0
_MEL_LOG_STEP = np.log(6.4) / 27.0


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    mel = 3.0 * f / 200.0
    log_region = f >= _MEL_BREAK_HZ
    mel = np.where(log_region,
                   _MEL_BREAK + np.log(np.maximum(f, _MEL_BREAK_HZ) / _MEL_BREAK_HZ) / _MEL_LOG_STEP,
                   mel)
    return mel


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    hz = 200.0 * m / 3.0
    log_region = m >= _MEL_BREAK
    hz = np.where(log_region, _MEL_BREAK_HZ * np.exp(_MEL_LOG_STEP * (m - _MEL_BREAK)), hz)
    return hz


def mel_filterbank() -> np.ndarray:
    """(N_MELS, N_FFT//2+1) triangular filters with unit peaks."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(MEL_FMIN), hz_to_mel(MEL_FMAX), N_MELS + 2))
    bin_hz = np.arange(N_FFT // 2 + 1) * (SAMPLE_RATE / N_FFT)
    fb = np.zeros((N_MELS, len(bin_hz)))
    for i in range(N_MELS):
        lo, center, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        up = (bin_hz - lo) / (center - lo)
        down = (hi - bin_hz) / (hi - center)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_filter_centers() -> np.ndarray:
    """Center frequency (Hz) of each of the 80 filters."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(MEL_FMIN), hz_to_mel(MEL_FMAX), N_MELS + 2))
    return edges_hz[1:-1]


_FILTERBANK = None


def _filterbank() -> np.ndarray:
    global _FILTERBANK
    if _FILTERBANK is None:
        _FILTERBANK = mel_filterbank()
    return _FILTERBANK


def mel_energies(frames: np.ndarray) -> np.ndarray:
    """Linear (pre-log) mel filter energies from windowed frames."""
    spectrum = np.fft.rfft(frames, n=N_FFT, axis=-1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    return power @ _filterbank().T


def log_mel80(frames: np.ndarray) -> np.ndarray:
    """(N, 400) windowed frames -> (N, 80) floored log mel energies."""
    if frames.ndim != 2 or frames.shape[1] != WIN_SAMPLES:
        raise InputError(f"frames must be (N, {WIN_SAMPLES}), got {frames.shape}")
    return np.log(np.maximum(mel_energies(frames), LOG_FLOOR))


def stack3(feats: np.ndarray) -> np.ndarray:
    """Fold every 3 consecutive rows into one 240-d row; remainder rows in
    excess of a multiple of 3 are dropped."""
    n, d = feats.shape
    if n < STACK:
        raise InputError(f"need at least {STACK} feature frames, got {n}")
    t = n // STACK
    return feats[: t * STACK].reshape(t, STACK * d)


def extract_features(w: Waveform) -> AcousticFeatures:
    return AcousticFeatures(stack3(log_mel80(frame_hann(w))))


def _match_length(noise: np.ndarray, n: int) -> np.ndarray:
    if len(noise) >= n:
        return noise[:n]
    reps = -(-n // len(noise))
    return np.tile(noise, reps)[:n]


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """Add `noise` to `clean`, rescaled so the full-clip power ratio is
    exactly `snr_db`: 10*log10(P_clean / P_noise) == snr_db."""
    p_clean = float(np.mean(clean.samples ** 2))
    matched = _match_length(noise.samples, len(clean.samples))
    p_noise = float(np.mean(matched ** 2))
    if p_clean == 0.0:
        raise InputError("clean signal has zero power")
    if p_noise == 0.0:
        raise InputError("noise signal has zero power")
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(clean.samples + gain * matched, clean.sample_rate)


def overlap_utterance(base: Waveform, distractor: Waveform, at_start: bool = True) -> Waveform:
    """Sum a short (<5 s) distractor into the start or end of `base` at
    unity gain."""
    if distractor.duration_s >= 5.0:
        raise InputError(f"distractor must be shorter than 5 s, got {distractor.duration_s:.2f} s")
    n = len(distractor.samples)
    if n > len(base.samples):
        raise InputError("distractor longer than the base utterance")
    out = base.samples.copy()
    if at_start:
        out[:n] += distractor.samples
    else:
        out[len(out) - n:] += distractor.samples
    return Waveform(out, base.sample_rate)


def read_wav(path) -> Waveform:
    """Single-channel 16-bit PCM RIFF reader."""
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise InputError(f"expected mono WAV, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise InputError(f"expected 16-bit PCM, got {8 * f.getsampwidth()}-bit")
        if f.getframerate() != SAMPLE_RATE:
            raise InputError(f"expected {SAMPLE_RATE} Hz, got {f.getframerate()}")
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())
