"""Exception types shared across the package."""


class InputError(ValueError):
    """Raised for malformed or inconsistent input data."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative fit fails to converge.

    Attributes
    ----------
    iterations : int
        Number of iterations performed before giving up.
    score_norm : float
        Max-abs component of the estimating function at the last iterate.
    """

    def __init__(self, message, iterations=0, score_norm=float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.score_norm = score_norm


class SingularMatrixError(RuntimeError):
    """Raised when a required matrix inverse does not exist."""
