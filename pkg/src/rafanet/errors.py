"""Exception types shared across the package."""


class RafaError(Exception):
    """Base class for all package errors."""


class DimensionError(RafaError, ValueError):
    """Operand shapes are incompatible for an operation."""


class ContractError(RafaError, ValueError):
    """A precondition of an operation was violated."""


class NumericError(RafaError, ArithmeticError):
    """A non-finite value showed up where a finite one was required."""


class ConfigError(RafaError, ValueError):
    """Invalid configuration value or combination of values."""


class FormatError(RafaError, ValueError):
    """A file on disk does not match its expected binary/text layout."""


class ManifestError(FormatError):
    """A dataset manifest is malformed or references bad data."""
