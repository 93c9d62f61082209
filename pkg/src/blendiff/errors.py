"""Exception hierarchy shared across the package."""


class BlendiffError(Exception):
    """Base class for all package errors."""


class ValidationError(BlendiffError, ValueError):
    """A value failed a finiteness or range check."""


class DimensionError(BlendiffError, ValueError):
    """Array shapes do not agree with a layout or with each other."""


class ConfigError(BlendiffError, ValueError):
    """A configuration document or parameter set is invalid."""


class StepError(BlendiffError, IndexError):
    """A diffusion step index fell outside ``[1, T]``."""


class ChunkLengthError(BlendiffError, ValueError):
    """Chunk length too short for the condition layout."""


class IngestionError(BlendiffError, ValueError):
    """Audio or sequence input could not be ingested."""


class ParseError(BlendiffError, ValueError):
    """A data file is malformed.  ``line`` is 1-based when known."""

    def __init__(self, message, line=None, channel=None):
        self.line = line
        self.channel = channel
        parts = [message]
        if line is not None:
            parts.append(f"line {line}")
        if channel is not None:
            parts.append(f"channel {channel!r}")
        super().__init__(": ".join([parts[0], ", ".join(parts[1:])]) if len(parts) > 1 else message)


class DatasetError(BlendiffError, ValueError):
    """The dataset is empty or inconsistent."""


class AlignmentError(BlendiffError, ValueError):
    """Two sequences that must be frame-aligned are not."""


class TrainingDivergedError(BlendiffError, RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, step, lr, grad_norm, loss):
        self.step = step
        self.lr = lr
        self.grad_norm = grad_norm
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at step {step} (lr={lr:g}, grad_norm={grad_norm:g})"
        )
