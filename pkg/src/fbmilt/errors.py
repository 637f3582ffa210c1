"""Named exceptions shared across the package."""


class FbmiltError(Exception):
    """Base class for all package errors."""


class ParameterError(FbmiltError, ValueError):
    """A parameter violates its documented constraint."""


class NotPositiveDefiniteError(FbmiltError, ValueError):
    """Matrix failed the symmetric-positive-definite construction check."""


class DegenerateConditioningError(FbmiltError, ValueError):
    """Conditioning block of a Gaussian vector is singular."""


class EmbeddingFailureError(FbmiltError, RuntimeError):
    """Circulant embedding produced a genuinely negative eigenvalue.

    Callers should fall back to the Cholesky sampler.
    """


class OutOfRegimeError(ParameterError):
    """(d, H) outside the regime where the requested constant is proven."""
