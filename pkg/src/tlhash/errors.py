"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so each failure class that a
caller may want to distinguish gets its own type.
"""


class HashingError(Exception):
    """Base class for all errors raised by tlhash."""


class InvalidSignError(HashingError, ValueError):
    """A sign vector contained something other than +1 or -1."""


class DimensionError(HashingError, ValueError):
    """Operands have incompatible lengths or shapes."""


class InvalidInputError(HashingError, ValueError):
    """Input values are malformed (non-finite, out of range, ...)."""


class DataError(HashingError):
    """A data file could not be parsed or is inconsistent."""


class InfeasibleSamplingError(HashingError):
    """No image admits a valid (query, positive, negative) triplet."""


class DivergenceError(HashingError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
