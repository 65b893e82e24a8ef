"""Exception types shared across the package.

Exit-code mapping used by the CLI: SchemaError -> 2, NumericalError -> 3,
UnderConstrainedError -> 4.
"""


class MotionLiftError(Exception):
    """Base class for all package errors."""


class SchemaError(MotionLiftError):
    """Malformed input file or config. Carries file/field context when known."""

    def __init__(self, message: str, path: str | None = None, field: str | None = None):
        self.path = path
        self.field = field
        parts = []
        if path is not None:
            parts.append(str(path))
        if field is not None:
            parts.append(f"field '{field}'")
        prefix = ": ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class NumericalError(MotionLiftError):
    """Numerical failure: degenerate geometry handed to an op that cannot recover."""


class UnderConstrainedError(MotionLiftError):
    """Not enough observations/views to solve the requested problem."""
