"""Exception hierarchy for threshreg."""

from __future__ import annotations


class ThresholdError(Exception):
    """Base class for all package errors."""


class InputError(ThresholdError, ValueError):
    """Bad user input (shapes, values, files). Maps to CLI exit code 2."""


class NumericError(ThresholdError, ArithmeticError):
    """Numerical failure during estimation. Maps to CLI exit code 3."""


class DimensionMismatch(InputError):
    pass


class DomainError(InputError):
    pass


class EmptyGrid(InputError):
    """No candidate threshold survives trimming and regime-size filtering."""


class ParseError(InputError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class MissingValue(ParseError):
    pass


class TooFewRows(InputError):
    pass


class RankDeficient(NumericError):
    pass


class DegenerateFit(NumericError):
    """The unconstrained fit is perfect, so SSR ratios are undefined."""


class ZeroDenominator(NumericError):
    """No observation receives kernel weight around the threshold estimate."""


class SingularMoment(NumericError):
    pass
