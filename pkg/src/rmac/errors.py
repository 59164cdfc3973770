"""Exception types shared across the package."""


class RmacError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(RmacError, ValueError):
    """An argument violates a documented precondition."""


class FormatError(RmacError, ValueError):
    """A binary stream does not conform to the expected layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CapacityError(RmacError, ValueError):
    """A value exceeds what the file format can represent."""


class ZeroVectorError(RmacError, ValueError):
    """A descriptor that must be normalizable has zero norm."""


class InsufficientDataError(RmacError, ValueError):
    """Not enough samples (or variance) to fit a model."""


class DimensionMismatchError(RmacError, ValueError):
    """Operands disagree on descriptor dimensionality."""
