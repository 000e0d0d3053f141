"""Deterministic synthetic audio-visual word task.

Each sample pairs a short word with (a) audio: one pure tone per character,
ramped at the boundaries, and (b) video: a full-frame drifting sinusoidal
grating whose spatial frequency and orientation encode the active character.
The transcript is recoverable from either modality alone; the audio channel
can be zeroed for the lip-reading variant. Everything derives from the task
seed, so equal seeds give byte-identical datasets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import SAMPLE_RATE, Waveform
from .config import TaskConfig
from .errors import ConfigError, InputError

BLANK = 0


@dataclass
class Sample:
    waveform: Waveform
    frames: np.ndarray  # uint8 (T_raw, 128, 128, 3)
    fps: float
    transcript: str
    label_ids: np.ndarray
    noise_index: int    # which other sample serves as this one's noise source


class SyntheticAvTask:
    def __init__(self, cfg: TaskConfig, render: bool = True):
        if cfg.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {cfg.n_classes}")
        if cfg.n_classes > len(cfg.charset) ** cfg.word_len:
            raise ConfigError("charset^word_len smaller than n_classes")
        self.cfg = cfg
        rng = np.random.default_rng(np.random.PCG64(cfg.seed))
        self.lexicon = self._build_lexicon(rng)
        self.class_ids = rng.integers(0, cfg.n_classes, size=cfg.n_samples)
        self.samples = []
        if render:
            self.samples = [self._render(rng, int(cls), idx)
                            for idx, cls in enumerate(self.class_ids)]
        for s in self.samples:
            if s.frames.shape[0] > cfg.max_frames:
                raise InputError(f"clip exceeds {cfg.max_frames} frames")

    # vocabulary: blank 0, then the charset in order
    def vocab_size(self) -> int:
        return 1 + len(self.cfg.charset)

    def char_to_id(self, ch: str) -> int:
        return self.cfg.charset.index(ch) + 1

    def id_to_char(self, token: int) -> str:
        return self.cfg.charset[token - 1]

    def ids_to_word(self, ids) -> str:
        return "".join(self.id_to_char(i) for i in ids)

    def _build_lexicon(self, rng) -> list[str]:
        chars = self.cfg.charset
        n_all = len(chars) ** self.cfg.word_len
        picks = rng.choice(n_all, size=self.cfg.n_classes, replace=False)
        words = []
        for p in picks:
            word, v = "", int(p)
            for _ in range(self.cfg.word_len):
                word += chars[v % len(chars)]
                v //= len(chars)
            words.append(word)
        return words

    def _tone(self, char_id: int, n: int, phase: float, amp: float) -> np.ndarray:
        freq = self.cfg.tone_base_hz + self.cfg.tone_step_hz * (char_id - 1)
        t = np.arange(n) / SAMPLE_RATE
        x = amp * np.sin(2.0 * np.pi * freq * t + phase)
        ramp = max(1, n // 10)
        env = np.ones(n)
        env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[-ramp:] = env[:ramp][::-1]
        return x * env

    def _grating(self, char_idx: int, phase: float) -> np.ndarray:
        """One 128x128x3 frame: stripes with per-character frequency and
        alternating orientation, drifting with `phase`."""
        cycles = 2 + char_idx
        coord = np.arange(128) * (2.0 * np.pi * cycles / 128.0)
        wave = np.sin(coord + phase)
        frame = np.tile(wave, (128, 1)) if char_idx % 2 == 0 else np.tile(wave[:, None], (1, 128))
        u8 = np.round(127.5 * (frame + 1.0)).astype(np.uint8)
        return np.repeat(u8[:, :, None], 3, axis=2)

    def _render(self, rng, cls: int, idx: int) -> Sample:
        cfg = self.cfg
        word = self.lexicon[cls]
        ids = np.array([self.char_to_id(c) for c in word], dtype=np.int64)
        n_char = int(cfg.char_ms * SAMPLE_RATE / 1000)
        amp = float(rng.uniform(0.25, 0.35))
        phases = rng.uniform(0.0, 2.0 * np.pi, size=len(word))
        audio = np.concatenate([self._tone(tok, n_char, phases[i], amp)
                                for i, tok in enumerate(ids)])
        duration = len(audio) / SAMPLE_RATE
        drift_phase = float(rng.uniform(0.0, 2.0 * np.pi))
        n_frames = int(np.ceil(duration * cfg.fps)) + 1
        char_s = cfg.char_ms / 1000.0
        frames = np.empty((n_frames, 128, 128, 3), dtype=np.uint8)
        for f in range(n_frames):
            tau = f / cfg.fps
            active = min(int(tau / char_s), len(word) - 1)
            phase = drift_phase + 2.0 * np.pi * 1.5 * tau  # 1.5 Hz drift
            frames[f] = self._grating(int(ids[active]) - 1, phase)
        noise_index = int((idx + 1 + rng.integers(0, max(1, cfg.n_samples - 1)))
                          % max(1, cfg.n_samples))
        if noise_index == idx:
            noise_index = (idx + 1) % max(1, cfg.n_samples)
        return Sample(Waveform(audio), frames, cfg.fps, word, ids, noise_index)

    def transcripts(self) -> list[str]:
        return [s.transcript for s in self.samples]
