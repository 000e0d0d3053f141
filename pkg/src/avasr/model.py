"""Audio-visual RNN-T model: channel-concat fusion, transformer encoder over
time, LSTM prediction network, additive tanh joint, greedy decoding, WER.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import tensor as T
from .config import RunConfig, config_to_text, load_config_text
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DecodeDivergenceWarning, DimensionError, InputError, SynchronizationError
from .layers import Embedding, Linear, Lstm, Module, TransformerEncoder
from .rnnt import BLANK, rnnt_loss_batch
from .tensor import Tensor, scoped
from .vgg21d import Vgg21dFrontEnd
from .vit import VitFrontEnd

AUDIO_DIM = 240


def fuse_concat(audio: Tensor, visual: Tensor) -> Tensor:
    """Channel-axis concatenation, audio first: (B,T,Da) + (B,T,Dv) ->
    (B,T,Da+Dv)."""
    if audio.ndim != 3 or visual.ndim != 3:
        raise DimensionError(f"fusion expects rank-3 inputs, got {audio.shape} and {visual.shape}")
    if audio.shape[0] != visual.shape[0]:
        raise DimensionError(f"batch mismatch: {audio.shape[0]} vs {visual.shape[0]}")
    if audio.shape[1] != visual.shape[1]:
        raise SynchronizationError(
            f"time axis mismatch: audio T={audio.shape[1]}, visual T={visual.shape[1]} "
            "(upstream resampling bug?)")
    return T.concat([audio, visual], axis=2)


class PredictionNetwork(Module):
    """Label-history encoder: embedding + stacked LSTM. Row 0 of the output
    conditions on the blank start symbol only; row u on labels[0:u]."""

    def __init__(self, vocab: int, layers: int, units: int, rng: np.random.Generator):
        self.embedding = Embedding(vocab, units, rng)
        self.lstm = Lstm(layers, units, units, rng)
        self.vocab = vocab

    def _check_ids(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab):
            raise InputError(f"token id out of range [0, {self.vocab})")
        return ids

    def __call__(self, labels: np.ndarray) -> Tensor:
        """(B, U) label ids (no blanks) -> (B, U+1, units)."""
        labels = self._check_ids(labels)
        if labels.size and np.any(labels == BLANK):
            raise InputError("blank id inside a label sequence")
        batch = labels.shape[0]
        ids = np.concatenate([np.zeros((batch, 1), dtype=np.int64), labels], axis=1)
        return self.lstm(self.embedding(ids))

    def start(self, batch: int = 1):
        state = self.lstm.zero_state(batch)
        return self.step(np.full(batch, BLANK, dtype=np.int64), state)

    def step(self, token_ids: np.ndarray, state):
        emb = self.embedding(self._check_ids(token_ids))
        return self.lstm.step(emb, state)


class JointNetwork(Module):
    """logits(t, u) = W_out tanh(W_e enc_t + W_p pred_u + b)."""

    def __init__(self, d_enc: int, d_pred: int, d_joint: int, vocab: int,
                 rng: np.random.Generator):
        self.enc_proj = Linear(d_enc, d_joint, rng, bias=False)
        self.pred_proj = Linear(d_pred, d_joint, rng, bias=False)
        self.bias = Tensor(np.zeros(d_joint), requires_grad=True)
        self.out = Linear(d_joint, vocab, rng)

    def __call__(self, enc: Tensor, pred: Tensor) -> Tensor:
        """(B,T,d_enc) x (B,U+1,d_pred) -> logits (B,T,U+1,V)."""
        b, t_steps, _ = enc.shape
        u_plus_1 = pred.shape[1]
        dj = self.bias.shape[0]
        e = T.reshape(self.enc_proj(enc), (b, t_steps, 1, dj))
        p = T.reshape(self.pred_proj(pred), (b, 1, u_plus_1, dj))
        h = T.tanh(T.add(T.add(e, p), self.bias))
        return self.out(h)


class AvAsrModel(Module):
    """Front-end + fusion + encoder + RNN-T decoder, per the run config."""

    def __init__(self, cfg: RunConfig, rng: np.random.Generator | None = None):
        cfg.validate()
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        if cfg.front_end == "vgg21d":
            self.front_end = Vgg21dFrontEnd(cfg.vgg, rng)
        elif cfg.front_end == "vit":
            self.front_end = VitFrontEnd(cfg.vit, rng)
        else:
            self.front_end = None
        enc = cfg.encoder
        self.input_proj = Linear(cfg.fused_dim, enc.d_model, rng)
        self.encoder = TransformerEncoder(enc.layers, enc.d_model, enc.heads, enc.d_ff, rng)
        vocab = cfg.vocab_size()
        self.prediction = PredictionNetwork(vocab, cfg.decoder.pred_layers,
                                            cfg.decoder.pred_units, rng)
        self.joint = JointNetwork(enc.d_model, cfg.decoder.pred_units,
                                  cfg.decoder.joint_dim, vocab, rng)
        self.vocab = vocab

    def visual_features(self, video_input) -> Tensor:
        x = video_input if isinstance(video_input, Tensor) else Tensor(np.asarray(video_input))
        with scoped(self.cfg.front_end):
            return self.front_end(x)

    def encode(self, audio_feats, video_input=None) -> Tensor:
        """audio (B,T,240) [+ video input per front-end] -> (B,T,d_enc)."""
        a = audio_feats if isinstance(audio_feats, Tensor) else Tensor(np.asarray(audio_feats))
        if a.shape[-1] != AUDIO_DIM:
            raise DimensionError(f"audio features must end in {AUDIO_DIM}, got {a.shape}")
        if self.front_end is not None:
            if video_input is None:
                raise InputError(f"front end {self.cfg.front_end!r} requires video input")
            fused = fuse_concat(a, self.visual_features(video_input))
        else:
            fused = a
        with scoped("encoder"):
            with scoped("input_proj"):
                x = self.input_proj(fused)
            for i, block in enumerate(self.encoder.blocks):
                with scoped(f"block{i + 1}"):
                    x = block(x)
            with scoped("ln_out"):
                return self.encoder.ln_out(x)

    def lattice_log_probs(self, enc: Tensor, labels: np.ndarray) -> Tensor:
        """Joint outputs for every lattice node, log-softmaxed over V."""
        with scoped("prediction"):
            pred = self.prediction(labels)
        with scoped("joint"):
            return T.log_softmax(self.joint(enc, pred))

    def loss(self, enc: Tensor, labels, t_lens, u_lens) -> Tensor:
        """Mean per-utterance transducer loss over the batch."""
        labels = np.asarray(labels, dtype=np.int64)
        log_probs = self.lattice_log_probs(enc, labels)
        losses = rnnt_loss_batch(log_probs, [list(row) for row in labels], t_lens, u_lens)
        return T.tmean(losses)

    def greedy_decode(self, enc_single: np.ndarray, max_symbols_per_frame: int = 10) -> list[int]:
        """Best-path decode of one utterance's (T, d_enc) encoder output.
        The output never contains the blank id."""
        enc_single = np.asarray(enc_single)
        if enc_single.ndim != 2:
            raise DimensionError(f"expected (T, d_enc), got {enc_single.shape}")
        out: list[int] = []
        pred_out, state = self.prediction.start(1)
        for t in range(enc_single.shape[0]):
            enc_t = Tensor(enc_single[t].reshape(1, 1, -1))
            emitted = 0
            while True:
                logits = self.joint(enc_t, T.reshape(pred_out, (1, 1, -1))).data.reshape(-1)
                best = int(np.argmax(logits))
                if best == BLANK:
                    break
                if emitted >= max_symbols_per_frame:
                    warnings.warn(
                        f"emission cap {max_symbols_per_frame} hit at frame {t}",
                        DecodeDivergenceWarning)
                    break
                out.append(best)
                pred_out, state = self.prediction.step(np.array([best]), state)
                emitted += 1
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(arrays):
            missing = set(own) ^ set(arrays)
            raise InputError(f"checkpoint parameter names disagree: {sorted(missing)[:5]}")
        for name, tensor in own.items():
            if arrays[name].shape != tensor.data.shape:
                raise InputError(f"shape mismatch for {name}: "
                                 f"{arrays[name].shape} vs {tensor.data.shape}")
            tensor.data = arrays[name].astype(tensor.data.dtype, copy=True)


def save_model(path, model: AvAsrModel) -> None:
    save_checkpoint(path, model.state_arrays(), config_to_text(model.cfg))


def load_model(path) -> AvAsrModel:
    arrays, config_text = load_checkpoint(path)
    cfg = load_config_text(config_text)
    T.set_default_dtype(np.float64 if cfg.dtype == "float64" else np.float32)
    model = AvAsrModel(cfg, np.random.default_rng(cfg.seed))
    # trainer checkpoints carry optimizer state under opt/; not model params
    model.load_state_arrays({k: v for k, v in arrays.items() if not k.startswith("opt/")})
    return model


def levenshtein(a, b) -> int:
    """Edit distance between two sequences."""
    n, m = len(a), len(b)
    if n == 0:
        return m
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1]))
        prev = cur
    return prev[m]


def wer(ref_words, hyp_words) -> float:
    """Word-level edit distance divided by reference length."""
    ref_words = list(ref_words)
    if not ref_words:
        raise InputError("empty reference")
    return levenshtein(ref_words, list(hyp_words)) / len(ref_words)


def corpus_wer(pairs) -> float:
    """Aggregate WER over (ref_words, hyp_words) pairs."""
    pairs = [(list(r), list(h)) for r, h in pairs]
    total_ref = sum(len(r) for r, _ in pairs)
    if total_ref == 0:
        raise InputError("empty reference corpus")
    return sum(levenshtein(r, h) for r, h in pairs) / total_ref
