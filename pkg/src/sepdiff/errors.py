"""Exception hierarchy shared across the toolkit."""


class SepdiffError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(SepdiffError, ValueError):
    """A parameter or parameter combination is out of its valid range."""


class DimensionError(SepdiffError, ValueError):
    """Array shapes or lengths are inconsistent with the operation."""


class NumericError(SepdiffError, ValueError):
    """Non-finite values where finite ones are required."""


class UnknownLabelError(SepdiffError, KeyError):
    """A class label is not in the model's vocabulary."""


class CapabilityError(SepdiffError, TypeError):
    """A model does not support the requested gradient mode."""


class TrainingDivergedError(SepdiffError, RuntimeError):
    """Training loss became non-finite.

    Attributes:
        step: index of the training step at which divergence was detected.
    """

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class DivergenceError(SepdiffError, RuntimeError):
    """A reverse-sampling state blew up or became non-finite.

    Carries the step index and the trace accumulated so far so the caller
    can inspect how the run went off the rails.
    """

    def __init__(self, message: str, step: int, trace=None):
        super().__init__(message)
        self.step = step
        self.trace = trace


class IngestionError(SepdiffError, ValueError):
    """A file could not be read or parsed (bad WAV header, silent source...)."""


class MetricUndefinedError(SepdiffError, ValueError):
    """A metric is undefined for the given inputs (e.g. zero reference)."""


class SchemaError(SepdiffError, ValueError):
    """A manifest, trace, or report file does not match the expected schema."""
