"""Exception hierarchy.

The CLI maps each family to an exit code: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class BadacError(Exception):
    """Base class for all package errors."""


class ConfigError(BadacError, ValueError):
    pass


class DataError(BadacError, ValueError):
    pass


class NumericalError(BadacError, ArithmeticError):
    pass


class LengthMismatchError(DataError):
    pass


class NonPositiveSigmaError(DataError):
    pass


class NonMonotoneGridError(DataError):
    pass


class GridMismatchError(DataError):
    pass


class EmptyClassError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class DegenerateRangeError(DataError):
    pass


class PriorSumError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class NonPSDCovarianceError(NumericalError):
    pass


class BoundsTooNarrowError(NumericalError):
    pass


class MissingColumnsError(DataError):
    pass


class MissingMetricError(DataError):
    pass


class SingleClassTruthError(DataError):
    pass
