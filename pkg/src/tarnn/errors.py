"""Exception hierarchy shared across the package."""


class TarnnError(Exception):
    """Base class for all package errors."""


class DimensionError(TarnnError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(TarnnError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(TarnnError, ValueError):
    """Invalid configuration or hyperparameters."""


class DataError(TarnnError, ValueError):
    """Malformed, inconsistent or unusable data."""


class NumericError(TarnnError, ArithmeticError):
    """Non-finite values appeared during computation."""


class UnsupportedVariantError(TarnnError, ValueError):
    """Operation is not defined for the requested model variant."""


class UndefinedMetricError(TarnnError, ValueError):
    """Metric cannot be computed for the given inputs."""
