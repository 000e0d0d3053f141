"""Exception types shared across the package."""


class AvasrError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(AvasrError):
    """Tensor shapes violate an operation's contract."""


class ConfigError(AvasrError):
    """A model or run configuration is invalid or incomplete."""


class InputError(AvasrError):
    """Caller-supplied data violates a precondition."""


class SynchronizationError(AvasrError):
    """Audio and video streams disagree on their time axis."""


class ContractError(AvasrError):
    """An internal numerical contract was violated (NaN/Inf, non-normalized
    log-probabilities, non-scalar loss)."""


class TrainingError(AvasrError):
    """Training diverged or produced invalid gradients."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class DecodeDivergenceWarning(UserWarning):
    """Greedy decoding hit the per-frame emission cap."""
