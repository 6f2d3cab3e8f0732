"""Exception hierarchy shared across the package."""


class GridmixError(Exception):
    """Base class for all package errors."""


class ValidationError(GridmixError):
    """Invalid inputs: malformed data, bad shapes, out-of-range settings."""


class NumericalError(GridmixError):
    """Numerical failure: singular systems, divergence, degenerate probabilities."""


class ConvergenceError(NumericalError):
    """Iteration budget exhausted before reaching tolerance.

    Carries the best iterate found so callers can inspect or resume.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
