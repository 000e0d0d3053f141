"""Fusion, encoder, prediction/joint networks, greedy decoding, WER,
checkpoint round-trips."""

import numpy as np
import pytest

from avasr import tensor as T
from avasr.config import desk_preset
from avasr.errors import DecodeDivergenceWarning, InputError, SynchronizationError
from avasr.layers import LstmCell
from avasr.model import (
    AvAsrModel,
    JointNetwork,
    PredictionNetwork,
    corpus_wer,
    fuse_concat,
    levenshtein,
    load_model,
    save_model,
    wer,
)

from helpers import check_grad


def tiny_cfg(front_end="audio-only"):
    cfg = desk_preset(front_end)
    cfg.dtype = "float64"
    cfg.encoder.layers = 2
    cfg.encoder.d_model = 16
    cfg.encoder.heads = 2
    cfg.encoder.d_ff = 32
    cfg.decoder.pred_units = 12
    cfg.decoder.joint_dim = 10
    cfg.vit.layers = 1
    cfg.vit.heads = 2
    cfg.vit.d_model = 8
    cfg.vit.d_ff = 16
    return cfg.validate()


class TestFusion:
    def test_dims_240_plus_512(self):
        a = T.Tensor(np.zeros((2, 5, 240)))
        v = T.Tensor(np.zeros((2, 5, 512)))
        assert fuse_concat(a, v).shape == (2, 5, 752)

    def test_zero_video_preserves_audio_block(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((1, 3, 240))
        fused = fuse_concat(T.Tensor(a), T.Tensor(np.zeros((1, 3, 64)))).data
        assert np.array_equal(fused[..., :240], a)
        assert np.all(fused[..., 240:] == 0.0)

    def test_slicing_recovers_inputs_bit_exact(self):
        rng = np.random.default_rng(1)
        a, v = rng.standard_normal((2, 4, 240)), rng.standard_normal((2, 4, 96))
        fused = fuse_concat(T.Tensor(a), T.Tensor(v)).data
        assert np.array_equal(fused[..., :240], a)
        assert np.array_equal(fused[..., 240:], v)

    def test_time_mismatch_is_synchronization_error(self):
        with pytest.raises(SynchronizationError):
            fuse_concat(T.Tensor(np.zeros((1, 4, 240))), T.Tensor(np.zeros((1, 5, 64))))


class TestEncoder:
    @pytest.mark.parametrize("t", [1, 5, 64])
    def test_time_extent_preserved(self, t):
        model = AvAsrModel(tiny_cfg(), np.random.default_rng(0))
        enc = model.encode(np.zeros((1, t, 240)))
        assert enc.shape == (1, t, 16)

    def test_zero_residual_branches_reduce_to_projection(self):
        model = AvAsrModel(tiny_cfg(), np.random.default_rng(1))
        for block in model.encoder.blocks:
            block.attn.wo.weight.data = np.zeros_like(block.attn.wo.weight.data)
            block.attn.wo.bias.data = np.zeros_like(block.attn.wo.bias.data)
            block.ff.fc2.weight.data = np.zeros_like(block.ff.fc2.weight.data)
            block.ff.fc2.bias.data = np.zeros_like(block.ff.fc2.bias.data)
        rng = np.random.default_rng(2)
        a = rng.standard_normal((1, 4, 240))
        got = model.encode(a).data
        expected = model.encoder.ln_out(model.input_proj(T.Tensor(a))).data
        assert np.allclose(got, expected, atol=1e-12)

    def test_gradient_check_tiny(self):
        model = AvAsrModel(tiny_cfg(), np.random.default_rng(3))
        rng = np.random.default_rng(4)
        a = T.Tensor(rng.standard_normal((1, 3, 240)), requires_grad=True)
        params = [a] + model.encoder.parameters()[:4]
        w_box = {}

        def make_loss():
            for p in params:
                p.zero_grad()
            with T.Graph() as g:
                y = model.encode(a)
                if "w" not in w_box:
                    w_box["w"] = T.Tensor(rng.standard_normal(y.shape))
                loss = T.tsum(T.mul(y, w_box["w"]))
                T.backward(g, loss)
            return loss.item(), {id(p): (p.grad.copy() if p.grad is not None else None)
                                 for p in params}

        check_grad(make_loss, params, rng, n_probe=5)


class TestPredictionNetwork:
    def test_empty_sequence_single_row(self):
        pn = PredictionNetwork(9, 2, 12, np.random.default_rng(0))
        out = pn(np.zeros((1, 0), dtype=np.int64))
        assert out.shape == (1, 1, 12)

    def test_prefix_property(self):
        pn = PredictionNetwork(9, 2, 12, np.random.default_rng(1))
        short = pn(np.array([[3, 5]]))
        longer = pn(np.array([[3, 5, 2, 7]]))
        assert np.allclose(short.data, longer.data[:, :3], atol=1e-14)

    def test_invalid_token_rejected(self):
        pn = PredictionNetwork(9, 2, 12, np.random.default_rng(2))
        with pytest.raises(InputError):
            pn(np.array([[11]]))
        with pytest.raises(InputError):
            pn(np.array([[0]]))  # blank inside labels

    def test_step_matches_sequence_forward(self):
        pn = PredictionNetwork(9, 2, 12, np.random.default_rng(3))
        labels = np.array([[4, 2, 6]])
        rows = pn(labels).data[0]
        out, state = pn.start(1)
        assert np.allclose(out.data[0], rows[0], atol=1e-14)
        for u, tok in enumerate(labels[0]):
            out, state = pn.step(np.array([tok]), state)
            assert np.allclose(out.data[0], rows[u + 1], atol=1e-14)

    def test_desk_scale_width_configurable(self):
        pn = PredictionNetwork(9, 2, 64, np.random.default_rng(4))
        assert pn(np.array([[1]])).shape == (1, 2, 64)


class TestJoint:
    def test_zero_weights_uniform_distribution(self):
        joint = JointNetwork(16, 12, 10, 7, np.random.default_rng(0))
        for p in joint.parameters():
            p.data = np.zeros_like(p.data)
        logits = joint(T.Tensor(np.ones((1, 3, 16))), T.Tensor(np.ones((1, 2, 12))))
        probs = T.softmax(logits).data
        assert np.allclose(probs, 1.0 / 7.0, atol=1e-15)

    def test_pre_activation_additivity(self):
        joint = JointNetwork(16, 12, 10, 7, np.random.default_rng(1))
        rng = np.random.default_rng(2)
        e1, e2 = rng.standard_normal((2, 1, 2, 16))
        pa = joint.enc_proj(T.Tensor(e1)).data
        pb = joint.enc_proj(T.Tensor(e2)).data
        pab = joint.enc_proj(T.Tensor(e1 + e2)).data
        assert np.allclose(pab, pa + pb, atol=1e-12)

    def test_finite_for_large_inputs(self):
        joint = JointNetwork(16, 12, 10, 7, np.random.default_rng(3))
        for magnitude in (1.0, 100.0, 1000.0):
            enc = T.Tensor(np.full((1, 2, 16), magnitude))
            pred = T.Tensor(np.full((1, 2, 12), -magnitude))
            assert np.all(np.isfinite(joint(enc, pred).data))


class TestGreedyDecode:
    def rig_two_token_model(self):
        """Joint prefers token 1 from the start state, blank afterwards."""
        cfg = tiny_cfg()
        cfg.decoder.vocab = 2
        model = AvAsrModel(cfg, np.random.default_rng(5))
        out0, state = model.prediction.start(1)
        out1, _ = model.prediction.step(np.array([1]), state)
        j = model.joint
        q0 = np.tanh(out0.data[0] @ j.pred_proj.weight.data)
        q1 = np.tanh(out1.data[0] @ j.pred_proj.weight.data)
        j.enc_proj.weight.data = np.zeros_like(j.enc_proj.weight.data)
        j.bias.data = np.zeros_like(j.bias.data)
        v = q0 - q1
        c = -float(v @ (q0 + q1)) / 2.0
        j.out.weight.data = np.stack([np.zeros_like(v), v], axis=1)
        j.out.bias.data = np.array([0.0, c])
        return model

    def test_blank_preferring_model_emits_nothing(self):
        cfg = tiny_cfg()
        model = AvAsrModel(cfg, np.random.default_rng(4))
        model.joint.out.weight.data = np.zeros_like(model.joint.out.weight.data)
        model.joint.out.bias.data = np.zeros_like(model.joint.out.bias.data)
        model.joint.out.bias.data[0] = 5.0  # blank always wins
        assert model.greedy_decode(np.zeros((4, 16))) == []

    def test_rigged_model_emits_single_token(self):
        model = self.rig_two_token_model()
        out = model.greedy_decode(np.zeros((1, 16)))
        assert out == [1]

    def test_output_never_contains_blank(self):
        model = AvAsrModel(tiny_cfg(), np.random.default_rng(6))
        rng = np.random.default_rng(7)
        for _ in range(5):
            decoded = model.greedy_decode(rng.standard_normal((6, 16)))
            assert 0 not in decoded

    def test_emission_cap_warns(self):
        cfg = tiny_cfg()
        cfg.decoder.vocab = 2
        model = AvAsrModel(cfg, np.random.default_rng(8))
        model.joint.out.weight.data = np.zeros_like(model.joint.out.weight.data)
        model.joint.out.bias.data = np.array([0.0, 5.0])  # token 1 always wins
        with pytest.warns(DecodeDivergenceWarning):
            out = model.greedy_decode(np.zeros((2, 16)))
        assert len(out) == 20  # 10 per frame, 2 frames


class TestWer:
    def test_identical_zero(self):
        assert wer("a b c".split(), "a b c".split()) == 0.0

    def test_hand_dp_one_third(self):
        assert abs(wer("a b c".split(), "a c".split()) - 1.0 / 3.0) < 1e-15

    def test_empty_hypothesis_all_deletions(self):
        assert wer("x y".split(), []) == 1.0

    def test_empty_reference_rejected(self):
        with pytest.raises(InputError):
            wer([], "a".split())

    def test_distance_symmetry_and_triangle(self):
        rng = np.random.default_rng(0)
        words = ["ab", "cd", "ef", "gh"]
        seqs = [[words[i] for i in rng.integers(0, 4, size=rng.integers(0, 6))]
                for _ in range(12)]
        for a in seqs:
            for b in seqs:
                assert levenshtein(a, b) == levenshtein(b, a)
                for c in seqs:
                    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)

    def test_corpus_wer_pools_reference_lengths(self):
        pairs = [("a b".split(), "a b".split()), ("c".split(), "d".split())]
        assert abs(corpus_wer(pairs) - 1.0 / 3.0) < 1e-15


class TestLstmZeroCase:
    def test_zero_weights_zero_hidden(self):
        cell = LstmCell(4, 3, np.random.default_rng(0))
        for p in cell.parameters():
            p.data = np.zeros_like(p.data)
        h, c = cell.zero_state(2)
        h2, c2 = cell(T.Tensor(np.ones((2, 4))), h, c)
        assert np.all(h2.data == 0.0)
        assert np.all(c2.data == 0.0)


class TestCheckpoints:
    def test_round_trip_bit_exact(self, tmp_path):
        cfg = tiny_cfg()
        model = AvAsrModel(cfg, np.random.default_rng(9))
        path = tmp_path / "model.ckpt"
        save_model(path, model)
        restored = load_model(path)
        for (name_a, pa), (name_b, pb) in zip(sorted(model.named_parameters()),
                                              sorted(restored.named_parameters())):
            assert name_a == name_b
            assert np.array_equal(pa.data, pb.data)

    def test_rewrite_is_byte_identical(self, tmp_path):
        model = AvAsrModel(tiny_cfg(), np.random.default_rng(10))
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_model(p1, model)
        save_model(p2, load_model(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_checkpoint_is_input_error(self, tmp_path):
        with pytest.raises(InputError):
            load_model(tmp_path / "absent.ckpt")
