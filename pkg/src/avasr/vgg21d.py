"""Baseline video front-end: 10-layer VGG-style (2+1)D convolutional net.

Five (spatial [1,3,3], temporal [3,1,1]) pairs with ReLU after every conv,
2x2 spatial max pooling after pairs 1, 2, 3 and 5 (none after pair 4), then
global spatial average pooling and a linear head to the visual feature
dimension, applied per time step. Temporal extent is preserved throughout.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .config import Vgg21dConfig
from .errors import DimensionError
from .layers import Linear, Module, Tensor, he_param
from .tensor import scoped


class SpatialConv(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.kernel = he_param(rng, (3, 3, c_in, c_out), 9 * c_in)
        self.bias = Tensor(np.full(c_out, 0.01), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.relu(T.add(T.conv_spatial(x, self.kernel), self.bias))


class TemporalConv(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.kernel = he_param(rng, (3, c_in, c_out), 3 * c_in)
        self.bias = Tensor(np.full(c_out, 0.01), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.relu(T.add(T.conv_temporal(x, self.kernel), self.bias))


class Vgg21dFrontEnd(Module):
    def __init__(self, cfg: Vgg21dConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.convs: list[Module] = []
        c_in = 3
        for pair in range(5):
            c_spatial = cfg.layer_channels[2 * pair]
            c_temporal = cfg.layer_channels[2 * pair + 1]
            self.convs.append(SpatialConv(c_in, c_spatial, rng))
            self.convs.append(TemporalConv(c_spatial, c_temporal, rng))
            c_in = c_temporal
        self.head = Linear(c_in, cfg.output_dim, rng)

    def __call__(self, video: Tensor) -> Tensor:
        """(B, T, H, W, 3) normalized frames -> (B, T, output_dim)."""
        if video.ndim != 5 or video.shape[2] != self.cfg.input_hw \
                or video.shape[3] != self.cfg.input_hw:
            raise DimensionError(
                f"expected (B, T, {self.cfg.input_hw}, {self.cfg.input_hw}, 3), "
                f"got {video.shape}")
        x = video
        for pair in range(5):
            with scoped(f"conv{2 * pair + 1:02d}_spatial"):
                x = self.convs[2 * pair](x)
            with scoped(f"conv{2 * pair + 2:02d}_temporal"):
                x = self.convs[2 * pair + 1](x)
            if (pair + 1) in self.cfg.pool_after_pairs:
                with scoped(f"pool{pair + 1}"):
                    x = T.maxpool_spatial(x)
        with scoped("head"):
            x = T.tmean(x, axes=(2, 3))  # global spatial average -> (B, T, C)
            return self.head(x)
