"""Exception hierarchy shared by all wavescope modules."""


class WavescopeError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(WavescopeError, ValueError):
    """Bad argument or configuration value."""


class FormatError(WavescopeError):
    """A persisted file could not be decoded."""


class MalformedHeaderError(FormatError):
    pass


class LengthMismatchError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class SchemaError(FormatError):
    pass


class TrainingError(WavescopeError, ArithmeticError):
    """Raised when training produces a non-finite loss."""


class ConfigError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StageError(WavescopeError):
    """Wraps a failure inside one pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
