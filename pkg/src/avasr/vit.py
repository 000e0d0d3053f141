"""Transformer video front-end: shared affine tubelet embedding, learned
per-position embedding, a small pre-norm transformer over each time step's
token set, and first-output pooling.

Pooling modes: "prepended-token" (default) prepends a learned token whose
output is taken; "first-tubelet" takes the output above tubelet 0. Attention
never spans time steps; temporal context enters only through the 8-frame
tubelet windows.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import VitConfig
from .errors import ConfigError, DimensionError
from .layers import Linear, Module, Tensor, TransformerEncoder, uniform_param
from .tensor import scoped


class VitFrontEnd(Module):
    def __init__(self, cfg: VitConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.proj = Linear(cfg.token_dim, cfg.d_model, rng)
        if cfg.pool == "prepended-token":
            self.pool_token = uniform_param(rng, (1, 1, cfg.d_model), 0.1)
        else:
            self.pool_token = None
        self.positional = uniform_param(rng, (cfg.seq_len, cfg.d_model), 0.1)
        self.encoder = TransformerEncoder(cfg.layers, cfg.d_model, cfg.heads,
                                          cfg.d_ff, rng, cfg.activation)

    def embed_tubelets(self, tokens: Tensor) -> Tensor:
        """Shared affine map on every (..., token_dim) token."""
        if tokens.shape[-1] != self.cfg.token_dim:
            raise DimensionError(
                f"token dim {tokens.shape[-1]} != expected {self.cfg.token_dim}")
        with scoped("embed"):
            return self.proj(tokens)

    def add_positional(self, x: Tensor) -> Tensor:
        """Add the learned per-position table; identical across time steps."""
        if x.shape[-2] != self.positional.shape[0]:
            raise ConfigError(
                f"positional table holds {self.positional.shape[0]} positions, "
                f"input has {x.shape[-2]} tokens")
        with scoped("positional"):
            return T.add(x, self.positional)

    def __call__(self, tokens: Tensor) -> Tensor:
        """(B, T, 16, token_dim) tubelets -> (B, T, d_model) features.

        Each time step runs independently: steps fold into the batch axis.
        """
        if tokens.ndim != 4 or tokens.shape[2] != self.cfg.tokens_per_step:
            raise DimensionError(
                f"expected (B, T, {self.cfg.tokens_per_step}, {self.cfg.token_dim}), "
                f"got {tokens.shape}")
        b, t_steps, n_tok, _ = tokens.shape
        d = self.cfg.d_model
        x = self.embed_tubelets(tokens)
        x = T.reshape(x, (b * t_steps, n_tok, d))
        if self.pool_token is not None:
            lead = T.broadcast_to(self.pool_token, (b * t_steps, 1, d))
            x = T.concat([lead, x], axis=1)
        x = self.add_positional(x)
        for i, block in enumerate(self.encoder.blocks):
            with scoped(f"block{i + 1}"):
                x = block(x)
        with scoped("ln_out"):
            x = self.encoder.ln_out(x)
        first = T.tslice(x, 1, 0, 1)  # first output of the last layer
        return T.reshape(first, (b, t_steps, d))
