"""Exception types shared across the package."""


class EnsythError(Exception):
    """Base class for all package errors."""


class ShapeError(EnsythError, ValueError):
    """Operands have incompatible or malformed shapes."""


class FormatError(EnsythError, ValueError):
    """Malformed on-disk bytes; ``offset`` is the failing byte position."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IntegrityError(EnsythError, ValueError):
    """Bundle contents inconsistent with their manifest or digest."""


class DataError(EnsythError, ValueError):
    """Malformed dataset input; ``line`` is the 1-based source line."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(EnsythError, ValueError):
    """Invalid experiment configuration; the message names the key path."""


class StageError(EnsythError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
