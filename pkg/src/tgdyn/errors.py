"""Exception types shared across the package."""


class TgdynError(Exception):
    """Base class for all package errors."""


class DimensionError(TgdynError):
    """Shapes or axes are incompatible with the requested operation."""


class DomainError(TgdynError):
    """An input value is outside the mathematical domain of the operation."""


class ContractError(TgdynError):
    """A caller violated an operation's precondition."""


class NumericError(TgdynError):
    """A non-finite value appeared where finite numbers are required."""


class ParseError(TgdynError):
    """Malformed input data."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(TgdynError):
    """Invalid configuration value."""


class DegenerateDataError(TgdynError):
    """A dataset does not support the requested fit (e.g. single-class labels)."""
