"""Exception hierarchy shared by every stage of the estimation pipeline."""


class HTEError(Exception):
    """Base class for all errors raised by this package."""


class InputError(HTEError, ValueError):
    """Invalid user input: shapes, non-finite values, bad treatment codes."""


class SingularDesignError(HTEError):
    """A least-squares or Newton design matrix is rank deficient."""


class NonConvergenceError(HTEError):
    """An iterative solver stopped without meeting its tolerance.

    The last (or best) iterate is kept on ``last_iterate`` so callers can
    inspect or reuse it.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class NumericError(HTEError, ArithmeticError):
    """A non-finite intermediate value appeared during a computation."""


class SingularCovarianceError(HTEError):
    """A plug-in covariance matrix could not be inverted."""


class BootstrapDegeneracyError(HTEError):
    """Too many bootstrap resamples failed to produce a fit."""

    def __init__(self, message, failures=0, attempted=0):
        super().__init__(message)
        self.failures = failures
        self.attempted = attempted


class ReplicationFailureError(HTEError):
    """Too many Monte Carlo replicates failed."""
