"""Exception and warning classes shared across the package."""


class QrdteError(Exception):
    """Base class for all package errors."""


class RankDeficient(QrdteError):
    """Design matrix is numerically collinear."""


class NonConvergence(QrdteError):
    """Iterative solver hit its iteration cap.

    The best iterate is attached as ``fit`` so callers can still inspect it.
    """

    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


class NonConvergenceWarning(UserWarning):
    pass


class DegenerateRegressor(QrdteError):
    """A regressor has zero variance."""


class DegenerateVector(QrdteError):
    """A vector passed to a correlation is constant."""


class ReplicateFailure(QrdteError):
    """Too many bootstrap or placebo replicates failed."""


class ZeroVariancePoint(UserWarning):
    """A curve point has zero bootstrap variance and is excluded from the sup."""


class InsufficientBootstrap(UserWarning):
    pass


class SchemaMismatch(QrdteError):
    """Input file does not match the column mapping."""


class EmptyGroup(QrdteError):
    """A treatment group has no rows left after filtering."""


class IoFailure(QrdteError):
    pass


class StepError(QrdteError):
    """Wraps an estimation error with the pipeline step where it happened."""

    def __init__(self, step, cause):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause
