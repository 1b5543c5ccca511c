"""Exception hierarchy shared by every module."""


class ProxyDMLError(Exception):
    """Base class for all library errors."""


class ConfigError(ProxyDMLError, ValueError):
    """Invalid configuration or argument values."""


class ParseError(ProxyDMLError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ShapeError(ProxyDMLError, ValueError):
    """Array dimensions do not compose."""


class NumericError(ProxyDMLError, ArithmeticError):
    """A computation produced NaN or infinity."""


class DegenerateInputError(ProxyDMLError, ValueError):
    """Input that the operation is undefined on, e.g. a zero vector to normalize."""


class UsageError(ProxyDMLError, RuntimeError):
    """API misuse, such as calling backward without a forward cache."""


class UnknownLabelError(ProxyDMLError, KeyError):
    """A label has no proxy in a static assignment."""


class CheckpointError(ProxyDMLError, ValueError):
    """Checkpoint file is unreadable, truncated, or fails its checksum."""
