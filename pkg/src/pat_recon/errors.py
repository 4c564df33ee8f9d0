"""Exception and warning types shared across the package."""


class InvalidArgumentError(ValueError):
    """An input violates a documented precondition."""


class ConvergenceError(RuntimeError):
    """An iterative routine stopped before reaching its tolerance.

    The best iterate found so far is kept on ``best`` so callers can still
    inspect or save it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class NumericalError(ArithmeticError):
    """NaN or infinity appeared in solver iterates."""


class TruncationWarning(UserWarning):
    """The acquisition window does not reach the farthest pixel."""
