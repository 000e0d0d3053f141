"""Neural building blocks on top of the tensor engine.

Parameters are initialized from a caller-supplied numpy Generator so that a
(seed, config) pair always yields bit-identical models.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor


def uniform_param(rng: np.random.Generator, shape, bound: float) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def he_param(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    """Variance-preserving init for ReLU-followed kernels."""
    return Tensor(rng.normal(0.0, math.sqrt(2.0 / fan_in), shape), requires_grad=True)


class Module:
    """Minimal parameter container. Parameter discovery walks instance
    attributes in definition order, recursing into sub-modules and lists."""

    def named_parameters(self, prefix: str = ""):
        for attr, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield prefix + attr, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{attr}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{attr}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def param_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = uniform_param(rng, (d_in, d_out), 1.0 / math.sqrt(d_in))
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        if self.bias is not None:
            y = T.add(y, self.bias)
        return y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-12):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.mul(T.layer_normalize(x, eps=self.eps), self.gamma), self.beta)


class Embedding(Module):
    def __init__(self, vocab: int, dim: int, rng: np.random.Generator):
        self.table = uniform_param(rng, (vocab, dim), 1.0 / math.sqrt(dim))

    def __call__(self, ids: np.ndarray) -> Tensor:
        return T.gather(self.table, ids)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over the second-to-last axis; input
    (N, S, d) or (S, d), scale 1/sqrt(d/heads)."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        if d_model % heads != 0:
            raise ConfigError(f"d_model {d_model} not divisible by heads {heads}")
        self.heads = heads
        self.d_model = d_model
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_model, d_model, rng)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        if x.shape[-1] != self.d_model:
            raise DimensionError(f"attention expects feature dim {self.d_model}, got {x.shape[-1]}")
        n, s, d = x.shape
        h, dh = self.heads, d // self.heads

        def split_heads(t):
            return T.transpose(T.reshape(t, (n, s, h, dh)), (0, 2, 1, 3))

        q = split_heads(self.wq(x))
        k = split_heads(self.wk(x))
        v = split_heads(self.wv(x))
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        attn = T.softmax(scores)
        ctxv = T.matmul(attn, v)  # (n, h, s, dh)
        merged = T.reshape(T.transpose(ctxv, (0, 2, 1, 3)), (n, s, d))
        out = self.wo(merged)
        if squeeze:
            out = T.reshape(out, (s, d))
        return out


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator, activation: str = "gelu"):
        if activation not in ("gelu", "relu"):
            raise ConfigError(f"unknown activation {activation!r}")
        self.fc1 = Linear(d_model, d_ff, rng)
        self.fc2 = Linear(d_ff, d_model, rng)
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        h = self.fc1(x)
        h = T.gelu(h) if self.activation == "gelu" else T.relu(h)
        return self.fc2(h)


class TransformerBlock(Module):
    """Pre-norm block: x + attn(ln(x)); x + ff(ln(x))."""

    def __init__(self, d_model: int, heads: int, d_ff: int, rng: np.random.Generator,
                 activation: str = "gelu"):
        self.ln1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads, rng)
        self.ln2 = LayerNorm(d_model)
        self.ff = FeedForward(d_model, d_ff, rng, activation)

    def __call__(self, x: Tensor) -> Tensor:
        x = T.add(x, self.attn(self.ln1(x)))
        return T.add(x, self.ff(self.ln2(x)))


class TransformerEncoder(Module):
    """Stack of pre-norm blocks with a final layer norm."""

    def __init__(self, depth: int, d_model: int, heads: int, d_ff: int,
                 rng: np.random.Generator, activation: str = "gelu"):
        self.blocks = [TransformerBlock(d_model, heads, d_ff, rng, activation)
                       for _ in range(depth)]
        self.ln_out = LayerNorm(d_model)

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return self.ln_out(x)


class LstmCell(Module):
    """Standard 4-gate cell; gate order (input, forget, cell, output)."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(d_hidden)
        self.wx = uniform_param(rng, (d_in, 4 * d_hidden), bound)
        self.wh = uniform_param(rng, (d_hidden, 4 * d_hidden), bound)
        self.bias = Tensor(np.zeros(4 * d_hidden), requires_grad=True)
        self.d_hidden = d_hidden

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        gates = T.add(T.add(T.matmul(x, self.wx), T.matmul(h, self.wh)), self.bias)
        hc = T.lstm_activation(gates, c)
        return (T.tslice(hc, 1, 0, self.d_hidden),
                T.tslice(hc, 1, self.d_hidden, 2 * self.d_hidden))

    def zero_state(self, batch: int) -> tuple[Tensor, Tensor]:
        z = np.zeros((batch, self.d_hidden), dtype=T.default_dtype())
        return Tensor(z.copy()), Tensor(z.copy())


class Lstm(Module):
    """Unidirectional stacked LSTM run step by step over axis 1."""

    def __init__(self, depth: int, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.cells = [LstmCell(d_in if i == 0 else d_hidden, d_hidden, rng)
                      for i in range(depth)]

    def zero_state(self, batch: int):
        return [cell.zero_state(batch) for cell in self.cells]

    def step(self, x: Tensor, state):
        new_state = []
        for cell, (h, c) in zip(self.cells, state):
            h, c = cell(x, h, c)
            new_state.append((h, c))
            x = h
        return x, new_state

    def __call__(self, x: Tensor) -> Tensor:
        b, steps, _ = x.shape
        state = self.zero_state(b)
        outs = []
        for u in range(steps):
            xt = T.reshape(T.tslice(x, 1, u, u + 1), (b, x.shape[2]))
            out, state = self.step(xt, state)
            outs.append(T.reshape(out, (b, 1, out.shape[-1])))
        return T.concat(outs, axis=1)
