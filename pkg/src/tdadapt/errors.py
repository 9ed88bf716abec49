"""Exception hierarchy. The CLI maps each family onto an exit code."""


class TdaError(Exception):
    """Base class for all package errors."""


class ConfigError(TdaError, ValueError):
    """Invalid parameters or configuration."""


class ShapeError(TdaError, ValueError):
    """Array dimensions do not line up."""


class DataFormatError(TdaError, ValueError):
    """Malformed input file, checkpoint, or dataset."""


class DomainError(TdaError, ValueError):
    """A label outside the admissible set for an energy model."""


class NumericalError(TdaError, ArithmeticError):
    """Training produced a non-finite quantity."""
