"""Exception types raised across the package."""


class DoubleweightError(Exception):
    """Base class for all package errors."""


class NotPositiveDefiniteError(DoubleweightError):
    """Symmetric factorization hit a pivot at or below the rank tolerance."""


class DegenerateFitError(DoubleweightError):
    """A regression was requested with no informative rows."""


class NonConvergenceError(DoubleweightError):
    """IRLS failed to meet the convergence criteria within max_iter."""


class LabelMismatchError(DoubleweightError):
    """Prediction design columns do not match the fitted design."""


class RankError(DoubleweightError):
    """A required design column was dropped as collinear."""


class DegenerateArmError(DoubleweightError):
    """A treatment arm has no usable (positive-weight) observations."""


class SingularBreadError(DoubleweightError):
    """The bread matrix of the sandwich estimator is rank-deficient."""


class TooManyFailuresError(DoubleweightError):
    """More than the tolerated share of bootstrap replicates failed."""


class EstimationError(DoubleweightError):
    """An internal estimator identity failed to hold numerically."""


class ParseError(DoubleweightError):
    """A CSV cell could not be parsed; carries row/column location."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaError(DoubleweightError):
    """Input data violated a declared column role."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column
