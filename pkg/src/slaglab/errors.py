"""Exception types shared across the laboratory."""


class SlagError(Exception):
    """Base class for all laboratory errors."""


class DomainError(SlagError, ValueError):
    """Mathematically invalid input (non-positive twist, bad exponent, ...)."""


class InfeasibleError(SlagError, ValueError):
    """A level-set or calibration problem has no solution for the given data."""


class OrderingError(SlagError):
    """A sampled spectrum violates the descending eigenvalue ordering."""


class DegenerateInputError(SlagError, ValueError):
    """Input is degenerate for the requested quantity (zero eigenvalue in a
    reciprocal sum, vanishing trace in a quotient, ...)."""


class PreconditionError(SlagError, ValueError):
    """A documented hypothesis of the check is not met by the input."""


class InsufficientDataError(SlagError, ValueError):
    """The requested quantity needs data (e.g. third derivatives) that the
    input does not carry."""


class TruncatedBallError(SlagError):
    """A requested ball or sublevel region leaves the computational domain."""


class ConstructionError(SlagError):
    """A manufactured problem could not be built (e.g. convexity fails)."""


class NonconvergenceError(SlagError):
    """Newton iteration failed; carries the best iterate seen."""

    def __init__(self, message, best=None, residual_norm=None):
        super().__init__(message)
        self.best = best
        self.residual_norm = residual_norm


class LinearSolverError(SlagError):
    """The inner Krylov iteration broke down or stagnated."""


class ContinuationError(SlagError):
    """Path continuation exhausted its bisection budget; carries the last
    parameter value that solved."""

    def __init__(self, message, last_good_t=None, best=None):
        super().__init__(message)
        self.last_good_t = last_good_t
        self.best = best
