"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid or unsupported scenario/configuration parameters."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap.

    The best iterate found so far is kept in ``best`` so callers can
    decide whether it is good enough.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
