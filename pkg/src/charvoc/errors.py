from __future__ import annotations


class CharvocError(Exception):
    """Base class for every error raised by the charvoc package."""


class DimensionError(CharvocError, ValueError):
    """Embedding dimension does not match the scheme parameters."""


class NonFiniteError(CharvocError, ValueError):
    """An embedding carries NaN or infinite values."""


class EncodingRangeError(CharvocError, ValueError):
    """A value falls outside the range an encoder can represent."""


class UnknownHashError(CharvocError, ValueError):
    pass


class ShapeError(CharvocError, ValueError):
    """Two templates or codes cannot be compared (length/arity mismatch)."""


class EmbeddingParseError(CharvocError, ValueError):
    pass


class DegenerateDistributionError(CharvocError, ValueError):
    pass


class UnknownUserError(CharvocError, LookupError):
    pass


class StoreError(CharvocError, RuntimeError):
    """Record log or session table could not be read or written."""
