"""Exception types shared across the package."""


class CollapseKitError(ValueError):
    """Base class for all collapsekit errors."""


class IngestError(CollapseKitError):
    """Raised when a log file cannot be parsed or violates curve invariants."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class CoverageError(CollapseKitError):
    """Raised when a curve does not cover a required training-fraction range."""


class InfeasibleError(CollapseKitError):
    """Raised when a requested operating point lies outside the modeled range."""
