"""Exception hierarchy shared by every module."""


class TsmixError(Exception):
    """Base class for all package errors."""


class ConfigError(TsmixError, ValueError):
    """Invalid configuration value (bad mode, probability, threshold, ...)."""


class DimensionError(TsmixError, ValueError):
    """Operand shapes are incompatible."""


class ValidationError(TsmixError, ValueError):
    """Numeric input violates a precondition (off-simplex labels, empty sets, ...)."""


class ContractError(TsmixError, RuntimeError):
    """API misuse, such as calling backward on a non-scalar."""


class DataError(TsmixError, ValueError):
    """A dataset file could not be parsed."""
