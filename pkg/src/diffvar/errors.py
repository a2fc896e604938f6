"""Exception hierarchy shared across the package."""


class DiffvarError(Exception):
    """Base class for all package errors."""


class ParameterError(DiffvarError, ValueError):
    """An argument is outside its admissible range."""


class DomainError(ParameterError):
    """A location lies outside the unit interval."""


class SimulationError(DiffvarError, RuntimeError):
    """The process covariance could not be factorized."""


class NumericError(DiffvarError, ArithmeticError):
    """A numerical step failed (singular system, degenerate smoother, ...)."""


class EmptySupportError(NumericError):
    """No cell intersects the kernel support at the evaluation point."""


class DegenerateSmootherError(NumericError):
    """A smoothing-matrix diagonal entry is >= 1, so the LOO shortcut is undefined."""


class PositivityError(NumericError):
    """A variogram estimate that must be positive is not."""


class SelectionError(NumericError):
    """Every candidate bandwidth failed."""


class ConfigError(DiffvarError, ValueError):
    """An experiment configuration is invalid."""
