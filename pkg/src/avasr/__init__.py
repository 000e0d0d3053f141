"""Audio-visual speech recognition stack: tensor engine, audio/video
front-ends, RNN-T model, training harness, and cost profiler."""

from .errors import (
    AvasrError,
    ConfigError,
    ContractError,
    DecodeDivergenceWarning,
    DimensionError,
    InputError,
    SynchronizationError,
    TrainingError,
)
from .tensor import Graph, Tensor, backward, default_dtype, set_default_dtype

__all__ = [
    "AvasrError",
    "ConfigError",
    "ContractError",
    "DecodeDivergenceWarning",
    "DimensionError",
    "Graph",
    "InputError",
    "SynchronizationError",
    "Tensor",
    "TrainingError",
    "backward",
    "default_dtype",
    "set_default_dtype",
]
