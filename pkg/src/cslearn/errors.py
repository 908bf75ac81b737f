"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, NumericalError (and anything unexpected) -> 3.
"""


class CslError(Exception):
    """Base class for all package errors."""


class ConfigError(CslError):
    """Invalid configuration value or combination."""


class DataError(CslError):
    """Input data violates the schema (missing columns, bad cells, sizes)."""


class NumericalError(CslError):
    """Numerical failure inside a fit or solve."""


class SingularDesignError(NumericalError):
    """Design matrix is rank-deficient (or n <= p) and the pseudo-inverse
    fallback is disabled."""


class DegenerateFoldError(NumericalError):
    """A cross-validation fold ended up empty."""


class EmptyScoresError(NumericalError):
    """Calibration score vector is empty."""


class EmptyAcceptedSetError(NumericalError):
    """Full conformal search accepted no candidate response value."""

    def __init__(self, message, nearest_candidate=None, nearest_gap=None):
        super().__init__(message)
        self.nearest_candidate = nearest_candidate
        self.nearest_gap = nearest_gap


class AllWeightsZeroError(CslError):
    """Aggregation received a weight vector that sums to zero."""
