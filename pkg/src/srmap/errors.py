"""Exception types shared across the package.

The CLI maps these onto exit codes: invalid arguments -> 2, I/O -> 3,
numeric failure -> 4.
"""


class SRMapError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SRMapError, ValueError):
    pass


class SchemaError(InvalidArgumentError):
    """A network manifest or config file is malformed or inconsistent."""


class UnsupportedOperationError(SRMapError, NotImplementedError):
    pass


class NumericFailure(SRMapError, ArithmeticError):
    """A computation did not converge or produced non-finite values."""


class WeightFileError(SRMapError, OSError):
    """Weight blob missing, truncated or over-long."""
