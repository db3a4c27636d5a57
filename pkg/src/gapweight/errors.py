"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration value (bad dimension, unknown key, bad range)."""


class ShapeMismatchError(ValueError):
    """Operands have incompatible layouts or dimensions."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class DomainError(ValueError):
    """An input is outside the mathematical domain of an operation."""


class IngestionError(ValueError):
    """A data file could not be parsed into a usable dataset."""


class SingularMatrixError(ArithmeticError):
    """A matrix that must be positive definite has a non-positive eigenvalue."""
