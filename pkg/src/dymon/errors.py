"""Exception hierarchy shared across the package.

The CLI maps these onto its exit codes, so library code raises them instead
of bare ValueError wherever the distinction matters to a caller.
"""


class DymonError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DymonError, ValueError):
    """Invalid parameters, degenerate inputs or inconsistent settings."""


class DimensionError(DymonError, ValueError):
    """Array shapes do not line up."""


class NumericError(DymonError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class InternalConsistencyError(DymonError, RuntimeError):
    """A cache or derived object no longer matches its source."""


class ParseError(DymonError, ValueError):
    """Malformed file content. ``offset`` is a byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(DymonError, ValueError):
    """File was written by an incompatible format version."""
