"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: DataError -> 3, NumericError -> 4.
"""


class MrcastError(Exception):
    """Base class for all package-specific errors."""


class DataError(MrcastError):
    """Malformed, missing, or insufficient input data."""


class NumericError(MrcastError):
    """Numeric failure: non-finite loss, factorization breakdown, etc."""
