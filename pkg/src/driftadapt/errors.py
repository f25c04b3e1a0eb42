"""Shared exception types."""


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DegenerateVectorError(ValueError):
    """A vector with (near-)zero norm was passed where direction matters."""


class DegenerateDataError(ValueError):
    """Input data cannot support the requested computation (e.g. all duplicates)."""


class ConfigError(ValueError):
    """A hyperparameter or configuration field is out of its valid range."""


class ContractError(ValueError):
    """A caller violated an interface precondition."""


class DivergenceError(RuntimeError):
    """Training or adaptation produced a non-finite loss."""


class NumericError(RuntimeError):
    """A numeric evaluation produced non-finite values."""


class CompatibilityError(ValueError):
    """A checkpoint or artifact does not match the current configuration."""
