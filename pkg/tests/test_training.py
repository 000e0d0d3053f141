"""Training harness: schedules, Adam, clipping, synthetic task, caching,
determinism, resume, fine-tuning."""

import json

import numpy as np
import pytest

from avasr import tensor as T
from avasr.config import TaskConfig, desk_preset
from avasr.errors import InputError, TrainingError
from avasr.rnnt import rnnt_loss_batch
from avasr.synthetic import SyntheticAvTask
from avasr.tensor import Tensor
from avasr.training import (
    Adam,
    FeatureCache,
    FinetuneSpec,
    LrSchedule,
    Trainer,
    clip_global_norm,
    draw_mix,
    finetune,
)

from helpers import enumerate_transducer_paths


def fast_audio_cfg(seed=1234, steps=60):
    cfg = desk_preset("audio-only")
    cfg.seed = seed
    cfg.train.steps = steps
    cfg.train.stop_wer = 0.0
    cfg.train.batch_size = 4
    cfg.task.n_samples = 8
    return cfg


class TestLrSchedule:
    def test_published_schedule_values(self):
        s = LrSchedule()
        assert s.lr_at(30000) == 1e-4
        assert s.lr_at(200000) == 1e-4
        assert s.lr_at(300000) == 1e-6
        assert s.lr_at(0) == 0.0

    def test_linear_midpoint(self):
        assert abs(LrSchedule().lr_at(15000) - 5e-5) < 1e-20

    def test_continuity_at_joints(self):
        s = LrSchedule()
        assert abs(s.lr_at(29999) - s.lr_at(30000)) < 1e-4 / 30000 + 1e-12
        assert s.lr_at(30000) == s.lr_at(30001) == s.lr_at(200000)
        assert abs(s.lr_at(200001) - s.lr_at(200000)) < 1e-8

    def test_monotone_phases(self):
        s = LrSchedule()
        warm = [s.lr_at(t) for t in range(0, 30001, 1500)]
        assert all(b >= a for a, b in zip(warm, warm[1:]))
        anneal = [s.lr_at(t) for t in range(200000, 300001, 5000)]
        assert all(b < a for a, b in zip(anneal, anneal[1:]))
        assert s.lr_at(350000) == 1e-6

    def test_negative_step_rejected(self):
        with pytest.raises(InputError):
            LrSchedule().lr_at(-1)


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = Adam([p])
        for _ in range(5):
            p.grad = np.zeros(2)
            opt.step(0.1)
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_first_step_is_bias_corrected_unit(self):
        p = Tensor(np.array([0.5]), requires_grad=True)
        opt = Adam([p])
        p.grad = np.array([1.0])
        opt.step(0.1)
        assert abs(p.data[0] - (0.5 - 0.1)) < 1e-8

    def test_nan_gradient_raises_with_step(self):
        p = Tensor(np.array([0.5]), requires_grad=True)
        opt = Adam([p])
        p.grad = np.array([np.nan])
        with pytest.raises(TrainingError, match="step 17"):
            opt.step(0.1, step_index=17)

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(3)
            p = Tensor(rng.standard_normal(8), requires_grad=True)
            opt = Adam([p])
            for i in range(10):
                p.grad = rng.standard_normal(8)
                opt.step(0.01)
            return p.data.copy()

        assert np.array_equal(run(), run())


class TestClipping:
    def test_scales_to_max_norm(self):
        p = Tensor(np.zeros(4), requires_grad=True)
        p.grad = np.full(4, 3.0)  # norm 6
        norm = clip_global_norm([p], 1.0)
        assert abs(norm - 6.0) < 1e-12
        assert abs(np.linalg.norm(p.grad) - 1.0) < 1e-12

    def test_disabled_when_zero(self):
        p = Tensor(np.zeros(4), requires_grad=True)
        p.grad = np.full(4, 3.0)
        clip_global_norm([p], 0.0)
        assert np.all(p.grad == 3.0)


class TestSyntheticTask:
    def test_same_seed_identical_bytes(self):
        a = SyntheticAvTask(TaskConfig(seed=5, n_samples=4))
        b = SyntheticAvTask(TaskConfig(seed=5, n_samples=4))
        for sa, sb in zip(a.samples, b.samples):
            assert sa.waveform.samples.tobytes() == sb.waveform.samples.tobytes()
            assert sa.frames.tobytes() == sb.frames.tobytes()
            assert sa.transcript == sb.transcript

    def test_different_seed_differs(self):
        a = SyntheticAvTask(TaskConfig(seed=5, n_samples=4))
        b = SyntheticAvTask(TaskConfig(seed=6, n_samples=4))
        assert any(sa.waveform.samples.tobytes() != sb.waveform.samples.tobytes()
                   for sa, sb in zip(a.samples, b.samples))

    def test_labels_uniform_over_10k(self):
        task = SyntheticAvTask(TaskConfig(seed=7, n_classes=8, n_samples=10000), render=False)
        counts = np.bincount(task.class_ids, minlength=8)
        assert np.all(np.abs(counts / 10000 - 1.0 / 8.0) < 0.05 / 8.0 + 0.02)
        # within +-5% relative of the uniform share
        assert np.all(np.abs(counts - 1250) <= 0.05 * 10000)

    def test_clip_length_cap(self):
        task = SyntheticAvTask(TaskConfig(seed=8, n_samples=2))
        assert all(s.frames.shape[0] <= 512 for s in task.samples)

    def test_transcript_matches_label_ids(self):
        task = SyntheticAvTask(TaskConfig(seed=9, n_samples=4))
        for s in task.samples:
            assert task.ids_to_word(s.label_ids) == s.transcript


class TestFeatureCache:
    def test_video_only_condition_zero_energy(self):
        task = SyntheticAvTask(TaskConfig(seed=10, n_samples=2))
        cache = FeatureCache(task, np.float64)
        silenced = cache._condition_waveform(0, "silence")
        assert np.all(silenced.samples == 0.0)

    def test_snr_conditions_pair_same_noise(self):
        task = SyntheticAvTask(TaskConfig(seed=11, n_samples=3))
        cache = FeatureCache(task, np.float64)
        w20 = cache._condition_waveform(0, "snr20")
        w0 = cache._condition_waveform(0, "snr0")
        clean = task.samples[0].waveform.samples
        n20, n0 = w20.samples - clean, w0.samples - clean
        # same noise realization, different gain
        ratio = np.linalg.norm(n0) / np.linalg.norm(n20)
        assert abs(ratio - 10.0) < 1e-9
        assert abs(np.abs(np.corrcoef(n20, n0)[0, 1]) - 1.0) < 1e-12

    def test_audio_video_time_aligned(self):
        task = SyntheticAvTask(TaskConfig(seed=12, n_samples=2))
        cache = FeatureCache(task, np.float32)
        a, v = cache.pair(0, "clean")
        assert a.shape[0] == v.shape[0]
        assert a.shape[1] == 240 and v.shape[1:] == (128, 128, 3)


class TestUntrainedLossOracle:
    def test_uniform_joint_matches_enumeration(self):
        T.set_default_dtype(np.float64)
        cfg = fast_audio_cfg()
        cfg.dtype = "float64"
        tr = Trainer(cfg)
        model = tr.model
        model.joint.out.weight.data = np.zeros_like(model.joint.out.weight.data)
        model.joint.out.bias.data = np.zeros_like(model.joint.out.bias.data)
        audio, video, labels = tr.make_batch(0)
        enc = model.encode(audio, video)
        log_probs = model.lattice_log_probs(enc, labels)
        t_steps, u_len = audio.shape[1], labels.shape[1]
        losses = rnnt_loss_batch(log_probs, [list(r) for r in labels],
                                 [t_steps] * len(labels), [u_len] * len(labels)).data
        for i in range(len(labels)):
            brute = enumerate_transducer_paths(log_probs.data[i], list(labels[i]))
            assert abs(losses[i] - brute) < 1e-9


class TestDeterminismAndResume:
    def test_two_runs_bit_identical(self, tmp_path):
        def run(out):
            cfg = fast_audio_cfg(steps=25)
            cfg.train.log_wall_ms = False
            tr = Trainer(cfg)
            tr.train(out_dir=out)
            return (tmp_path / out / "model.ckpt").read_bytes(), \
                   (tmp_path / out / "train.log").read_text()

        b1, l1 = run(tmp_path / "a")
        b2, l2 = run(tmp_path / "b")
        assert b1 == b2
        assert l1 == l2

    def test_resume_reproduces_next_step_loss(self, tmp_path):
        cfg = fast_audio_cfg(steps=8)
        tr = Trainer(cfg)
        tr.train(steps=5, out_dir=tmp_path / "run")
        loss_next = tr.train_step(5)

        tr2 = Trainer(fast_audio_cfg(steps=8))
        tr2.restore(tmp_path / "run" / "model.ckpt")
        assert tr2.start_step == 5
        loss_resumed = tr2.train_step(5)
        assert loss_resumed == loss_next  # bit-identical

    def test_wall_ms_present_by_default(self, tmp_path):
        cfg = fast_audio_cfg(steps=2)
        tr = Trainer(cfg)
        tr.train(out_dir=tmp_path / "run")
        rec = json.loads((tmp_path / "run" / "train.log").read_text().splitlines()[0])
        assert set(rec) == {"step", "loss", "lr", "wall_ms"}


class TestFinetune:
    def test_mix_ratio_within_one_percent(self):
        rng = np.random.default_rng(0)
        draws = draw_mix(rng, 10000, 0.5)
        assert abs(draws.mean() - 0.5) < 0.01

    def test_finetune_schedule_endpoints(self):
        spec = FinetuneSpec()
        assert spec.lr_at(0) == 1e-5
        assert spec.lr_at(10000) == 5e-8

    def test_finetune_improves_new_task(self):
        cfg = fast_audio_cfg(seed=77, steps=300)
        cfg.task.seed = 21
        cfg.train.stop_wer = 0.01
        cfg.train.eval_every = 50
        tr = Trainer(cfg)
        tr.train()
        new_task = SyntheticAvTask(TaskConfig(seed=22, n_samples=8))
        pre_tr = Trainer(cfg, task=new_task, model=tr.model)
        pre = pre_tr.evaluate("clean")
        spec = FinetuneSpec(steps=200, lr_start=2e-3, lr_end=2e-4)
        finetune(tr, new_task, spec)
        post = pre_tr.evaluate("clean")
        assert post <= pre
        assert tr.evaluate("clean") <= 0.25  # original task not forgotten badly
