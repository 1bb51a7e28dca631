"""Exception hierarchy shared by every cnts module."""


class CNTSError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CNTSError, ValueError):
    """Invalid configuration or hyperparameters."""


class ShapeError(CNTSError, ValueError):
    """Array widths or lengths that do not line up."""


class NumericError(CNTSError, ArithmeticError):
    """A NaN/Inf appeared, or a numeric precondition failed."""


class ValidationError(CNTSError, ValueError):
    """Input data violates a documented contract."""


class ParseError(ValidationError):
    """Malformed text input. ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateSelectionError(CNTSError, ValueError):
    """A selection mask left too few elements for the loss to be defined."""


class CheckpointError(CNTSError):
    """Base class for checkpoint loading failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointPayloadError(CheckpointError):
    pass


class CheckpointKindError(CheckpointError):
    pass
