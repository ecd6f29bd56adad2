"""Exception and warning types raised across the package."""


class IvMediationError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class ConfigError(IvMediationError):
    """Invalid or incomplete run configuration."""


class DataError(IvMediationError):
    """Input data violates a structural requirement."""


class MissingColumn(DataError):
    pass


class NonBinaryAssignment(DataError):
    pass


class EmptyAfterFiltering(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class NonBinaryMediator(DataError):
    pass


class InvalidCount(ConfigError):
    pass


class InvalidSpec(ConfigError):
    pass


class NumericalError(IvMediationError):
    """A numerical procedure could not produce a valid result."""

    exit_code = 3


class DimensionMismatch(NumericalError):
    pass


class RankDeficient(NumericalError):
    def __init__(self, message, rank=None, cols=None):
        super().__init__(message)
        self.rank = rank
        self.cols = cols


class Separation(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


class WeakInstrumentWarning(UserWarning):
    """First-stage partial F below the reliability threshold."""


class ThresholdExtrapolationWarning(UserWarning):
    """Instrument count beyond the tabulated weak-IV thresholds."""
