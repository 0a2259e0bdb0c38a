"""Exception types shared across the package."""


class RefacError(Exception):
    """Base class for every package-specific error."""


class ValidationError(RefacError, ValueError):
    """Invalid user input: bad shapes, ranges, configs, or data files."""


class SingularMatrixError(RefacError):
    """A matrix that must be inverted is singular or too ill-conditioned.

    Raised instead of silently regularizing; the message names the matrix.
    """
