"""Exception hierarchy shared by all netcausal modules."""


class NetCausalError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(NetCausalError, ValueError):
    """An argument violates a documented precondition."""


class ParseError(NetCausalError, ValueError):
    """A text input (edge list, CSV, TOML) could not be parsed.

    ``line`` and ``column`` are 1-based when known.
    """

    def __init__(self, message, line=None, column=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.column = column


class NumericError(NetCausalError, FloatingPointError):
    """A forward pass produced NaN or Inf."""


class TrainingError(NetCausalError, RuntimeError):
    """Optimisation diverged. ``last_finite_epoch`` is the last epoch with a finite loss."""

    def __init__(self, message, last_finite_epoch=None):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch


class ConstraintInfeasibleError(NetCausalError, RuntimeError):
    """No constraint weight in the search grid met the capacity tolerance."""

    def __init__(self, message, closest_residual=None):
        super().__init__(message)
        self.closest_residual = closest_residual


class ConfigError(NetCausalError, ValueError):
    """Invalid or unknown configuration entry."""
