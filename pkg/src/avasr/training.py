"""Training harness: learning-rate schedules, Adam, feature caching for the
synthetic task's noise conditions, the train/fine-tune loops, and the WER
evaluation grid.

Determinism: every random choice derives from (seed, step) through a
SeedSequence, so runs are bit-reproducible and checkpoint resume replays the
identical batch schedule.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .audio import Waveform, extract_features, mix_at_snr, overlap_utterance
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, ScheduleConfig, config_to_text
from .errors import InputError, TrainingError
from .model import AvAsrModel, corpus_wer
from .synthetic import SyntheticAvTask
from .tensor import Tensor
from .video import ACOUSTIC_RATE, VideoClip, extract_tubelets, normalize_rgb, resample_nn

EVAL_CONDITIONS = ("clean", "snr20", "snr10", "snr0", "overlap")
_SNR_BY_CONDITION = {"snr20": 20.0, "snr10": 10.0, "snr0": 0.0}
AUGMENT_CONDITIONS = ("clean", "snr20", "snr10", "snr0")


@dataclass
class LrSchedule:
    """Linear warmup to base_lr, constant plateau, then closed-form
    exponential decay hitting final_lr exactly at anneal_until."""
    base_lr: float = 1e-4
    warmup_steps: int = 30000
    constant_until: int = 200000
    anneal_until: int = 300000
    final_lr: float = 1e-6

    @classmethod
    def from_config(cls, cfg: ScheduleConfig) -> "LrSchedule":
        return cls(cfg.base_lr, cfg.warmup_steps, cfg.constant_until,
                   cfg.anneal_until, cfg.final_lr)

    def lr_at(self, step: int) -> float:
        if step < 0:
            raise InputError(f"negative step {step}")
        if step < self.warmup_steps:
            return self.base_lr * step / self.warmup_steps
        if step <= self.constant_until:
            return self.base_lr
        if step >= self.anneal_until:
            return self.final_lr  # endpoint hit exactly, no pow round-off
        frac = (step - self.constant_until) / (self.anneal_until - self.constant_until)
        return self.base_lr * (self.final_lr / self.base_lr) ** frac


@dataclass
class FinetuneSpec:
    steps: int = 10000
    batch: int = 4096
    lr_start: float = 1e-5
    lr_end: float = 5e-8
    mix_fraction: float = 0.5  # share of batch drawn from the fine-tune task

    def lr_at(self, step: int) -> float:
        if step >= self.steps:
            return self.lr_end
        frac = max(step, 0) / self.steps
        return self.lr_start * (self.lr_end / self.lr_start) ** frac


def draw_mix(rng: np.random.Generator, n: int, fraction: float) -> np.ndarray:
    """Boolean mask: True -> draw from the fine-tune task (in expectation,
    `fraction` of the batch)."""
    return rng.random(n) < fraction


class Adam:
    """Standard first/second-moment optimizer with bias correction."""

    def __init__(self, params: list[Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float, step_index: int | None = None) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError("NaN gradient", step=step_index)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / bias1
            v_hat = self.v[i] / bias2
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"opt/t": np.array([float(self.t)])}
        for i in range(len(self.params)):
            out[f"opt/m.{i}"] = self.m[i]
            out[f"opt/v.{i}"] = self.v[i]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["opt/t"][0])
        for i in range(len(self.params)):
            self.m[i] = arrays[f"opt/m.{i}"].astype(self.m[i].dtype, copy=True)
            self.v[i] = arrays[f"opt/v.{i}"].astype(self.v[i].dtype, copy=True)


def clip_global_norm(params: list[Tensor], max_norm: float) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


class FeatureCache:
    """Per-sample acoustic features for every condition, plus resampled
    normalized video; built lazily, keyed on (index, condition)."""

    def __init__(self, task: SyntheticAvTask, dtype):
        self.task = task
        self.dtype = dtype
        self._audio: dict[tuple[int, str], np.ndarray] = {}
        self._video: dict[int, np.ndarray] = {}

    def _condition_waveform(self, idx: int, condition: str) -> Waveform:
        sample = self.task.samples[idx]
        clean = sample.waveform
        if condition == "clean":
            return clean
        if condition == "silence":
            return Waveform(np.zeros_like(clean.samples))
        noise = self.task.samples[sample.noise_index].waveform
        if condition in _SNR_BY_CONDITION:
            return mix_at_snr(clean, noise, _SNR_BY_CONDITION[condition])
        if condition == "overlap":
            n = min(len(noise.samples), len(clean.samples))
            distractor = Waveform(noise.samples[:n])
            return overlap_utterance(clean, distractor, at_start=bool(idx % 2))
        raise InputError(f"unknown condition {condition!r}")

    def audio(self, idx: int, condition: str) -> np.ndarray:
        key = (idx, condition)
        if key not in self._audio:
            feats = extract_features(self._condition_waveform(idx, condition)).data
            self._audio[key] = feats.astype(self.dtype)
        return self._audio[key]

    def video(self, idx: int) -> np.ndarray:
        if idx not in self._video:
            sample = self.task.samples[idx]
            clip = VideoClip(normalize_rgb(sample.frames, dtype=self.dtype), sample.fps)
            self._video[idx] = resample_nn(clip, ACOUSTIC_RATE).frames
        return self._video[idx]

    def pair(self, idx: int, condition: str) -> tuple[np.ndarray, np.ndarray]:
        """Time-aligned (audio (T,240), video (T,128,128,3))."""
        a = self.audio(idx, condition)
        v = self.video(idx)
        t_steps = min(a.shape[0], v.shape[0])
        return a[:t_steps], v[:t_steps]


def _step_rng(seed: int, step: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(stream, step)))


class Trainer:
    """Forward/loss/backward/Adam loop over a synthetic task."""

    def __init__(self, cfg: RunConfig, task: SyntheticAvTask | None = None,
                 model: AvAsrModel | None = None):
        cfg.validate()
        T.set_default_dtype(np.float64 if cfg.dtype == "float64" else np.float32)
        self.cfg = cfg
        self.task = task or SyntheticAvTask(cfg.task)
        self.model = model or AvAsrModel(cfg, np.random.default_rng(cfg.seed))
        self.schedule = LrSchedule.from_config(cfg.schedule)
        self.params = self.model.parameters()
        self.optimizer = Adam(self.params)
        self.cache = FeatureCache(self.task, T.default_dtype())
        self.start_step = 0
        self.history: list[dict] = []

    # -- batching ----------------------------------------------------------
    def _video_input(self, video_frames: np.ndarray) -> np.ndarray | None:
        if self.cfg.front_end == "vit":
            return np.stack([extract_tubelets(VideoClip(v, ACOUSTIC_RATE))
                             for v in video_frames])
        if self.cfg.front_end == "vgg21d":
            return video_frames
        return None

    def _audio_condition(self, rng: np.random.Generator) -> str:
        if self.cfg.train.video_only:
            return "silence"
        if not self.cfg.train.noise_augment:
            return "clean"
        return AUGMENT_CONDITIONS[int(rng.integers(0, len(AUGMENT_CONDITIONS)))]

    def make_batch(self, step: int):
        rng = _step_rng(self.cfg.seed, step, stream=1)
        n = len(self.task.samples)
        idxs = rng.integers(0, n, size=self.cfg.train.batch_size)
        audio, video, labels = [], [], []
        for idx in idxs:
            condition = self._audio_condition(rng)
            a, v = self.cache.pair(int(idx), condition)
            audio.append(a)
            video.append(v)
            labels.append(self.task.samples[int(idx)].label_ids)
        t_min = min(a.shape[0] for a in audio)
        audio_b = np.stack([a[:t_min] for a in audio])
        video_b = np.stack([v[:t_min] for v in video])
        labels_b = np.stack(labels)
        return audio_b, self._video_input(video_b), labels_b

    # -- core loop ---------------------------------------------------------
    def train_step(self, step: int) -> float:
        audio, video, labels = self.make_batch(step)
        batch, t_steps = audio.shape[0], audio.shape[1]
        u_len = labels.shape[1]
        self.model.zero_grad()
        with T.Graph() as g:
            enc = self.model.encode(audio, video)
            loss = self.model.loss(enc, labels, [t_steps] * batch, [u_len] * batch)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise TrainingError(f"loss diverged ({loss_value})", step=step)
            T.backward(g, loss)
        clip_global_norm(self.params, self.cfg.train.clip_norm)
        self.optimizer.step(self.schedule.lr_at(step), step_index=step)
        return loss_value

    def train(self, steps: int | None = None, out_dir=None, quiet: bool = True):
        """Run up to `steps` optimizer steps (early-stopping on stop_wer);
        returns the history of per-step records."""
        steps = self.cfg.train.steps if steps is None else steps
        log_path = None
        if out_dir is not None:
            from pathlib import Path
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            log_path = out_dir / "train.log"
            if self.start_step == 0 and log_path.exists():
                log_path.unlink()
        stop_wer = self.cfg.train.stop_wer
        eval_every = max(1, self.cfg.train.eval_every)
        for step in range(self.start_step, steps):
            t0 = time.perf_counter()
            try:
                loss_value = self.train_step(step)
            except TrainingError:
                if out_dir is not None:
                    self._dump_diagnostics(out_dir, step)
                raise
            wall_ms = (time.perf_counter() - t0) * 1e3
            record = {"step": step, "loss": float(loss_value),
                      "lr": self.schedule.lr_at(step)}
            if self.cfg.train.log_wall_ms:
                record["wall_ms"] = round(wall_ms, 3)
            self.history.append(record)
            if log_path is not None:
                with open(log_path, "a") as f:
                    f.write(json.dumps(record) + "\n")
            if not quiet and step % 50 == 0:
                print(f"step {step} loss {loss_value:.4f} lr {record['lr']:.2e}")
            self.start_step = step + 1
            cadence = self.cfg.train.checkpoint_every
            if out_dir is not None and cadence and (step + 1) % cadence == 0:
                self.save(out_dir / f"step{step + 1:06d}.ckpt")
            if stop_wer > 0 and (step + 1) % eval_every == 0:
                condition = "silence" if self.cfg.train.video_only else "clean"
                if self.evaluate(condition) <= stop_wer:
                    break
        if out_dir is not None:
            self.save(out_dir / "model.ckpt")
        return self.history

    def _dump_diagnostics(self, out_dir, step: int) -> None:
        from pathlib import Path
        grads = {name: (float(np.abs(p.grad).max()) if p.grad is not None else None)
                 for name, p in self.model.named_parameters()}
        dump = {"step": step, "lr": self.schedule.lr_at(step), "max_abs_grads": grads}
        Path(out_dir, "divergence.json").write_text(json.dumps(dump, indent=2))

    # -- evaluation --------------------------------------------------------
    def evaluate(self, condition: str = "clean", indices=None) -> float:
        """Corpus WER of greedy decodes on the task under one condition."""
        indices = range(len(self.task.samples)) if indices is None else indices
        pairs = []
        audio, video, refs = [], [], []
        for idx in indices:
            cond = condition
            if self.cfg.train.video_only and condition == "clean":
                cond = "silence"
            a, v = self.cache.pair(int(idx), cond)
            audio.append(a)
            video.append(v)
            refs.append(self.task.samples[int(idx)].transcript)
        t_min = min(a.shape[0] for a in audio)
        audio_b = np.stack([a[:t_min] for a in audio])
        video_b = self._video_input(np.stack([v[:t_min] for v in video]))
        enc = self.model.encode(audio_b, video_b).data
        for i, ref in enumerate(refs):
            decoded = self.model.greedy_decode(enc[i])
            hyp = self.task.ids_to_word(decoded) if decoded else ""
            pairs.append(([ref], [hyp] if hyp else []))
        return corpus_wer(pairs)

    def evaluation_grid(self) -> dict[str, float]:
        return {cond: self.evaluate(cond) for cond in EVAL_CONDITIONS}

    # -- persistence -------------------------------------------------------
    def save(self, path) -> None:
        arrays = dict(self.model.state_arrays())
        arrays.update(self.optimizer.state_arrays())
        arrays["opt/step"] = np.array([float(self.start_step)])
        save_checkpoint(path, arrays, config_to_text(self.cfg))

    def restore(self, path) -> None:
        arrays, _ = load_checkpoint(path)
        model_arrays = {k: v for k, v in arrays.items() if not k.startswith("opt/")}
        self.model.load_state_arrays(model_arrays)
        self.optimizer.load_state_arrays(arrays)
        self.start_step = int(arrays["opt/step"][0])


def finetune(trainer: Trainer, finetune_task: SyntheticAvTask, spec: FinetuneSpec,
             batch_size: int | None = None):
    """Fine-tune on a seeded 50-50 mix of the trainer's task and a new task.

    Uses the spec's exponential schedule; batch size defaults to the
    trainer's. Returns the loss history.
    """
    cfg = trainer.cfg
    base_cache = trainer.cache
    new_cache = FeatureCache(finetune_task, T.default_dtype())
    batch_size = batch_size or cfg.train.batch_size
    history = []
    for step in range(spec.steps):
        rng = _step_rng(cfg.seed, step, stream=7)
        from_new = draw_mix(rng, batch_size, spec.mix_fraction)
        audio, video, labels = [], [], []
        for take_new in from_new:
            task = finetune_task if take_new else trainer.task
            cache = new_cache if take_new else base_cache
            idx = int(rng.integers(0, len(task.samples)))
            condition = trainer._audio_condition(rng)
            a, v = cache.pair(idx, condition)
            audio.append(a)
            video.append(v)
            labels.append(task.samples[idx].label_ids)
        t_min = min(a.shape[0] for a in audio)
        audio_b = np.stack([a[:t_min] for a in audio])
        video_b = trainer._video_input(np.stack([v[:t_min] for v in video]))
        labels_b = np.stack(labels)
        batch, t_steps = audio_b.shape[0], audio_b.shape[1]
        u_len = labels_b.shape[1]
        trainer.model.zero_grad()
        with T.Graph() as g:
            enc = trainer.model.encode(audio_b, video_b)
            loss = trainer.model.loss(enc, labels_b, [t_steps] * batch, [u_len] * batch)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise TrainingError(f"loss diverged ({loss_value})", step=step)
            T.backward(g, loss)
        clip_global_norm(trainer.params, cfg.train.clip_norm)
        trainer.optimizer.step(spec.lr_at(step), step_index=step)
        history.append({"step": step, "loss": float(loss_value), "lr": spec.lr_at(step)})
    return history
