"""Exception types shared across the package."""


class HdinferError(Exception):
    """Base class for package-specific failures."""


class NonSPDError(HdinferError):
    """Cholesky pivot fell at or below the positivity floor."""


class CsvParseError(HdinferError):
    """Malformed numeric CSV; message carries the file/row/column."""


class DecorrelatorError(HdinferError):
    """A decorrelation column failed to reach a feasible solution."""

    def __init__(self, message, *, max_update=None, feas_violation=None):
        super().__init__(message)
        self.max_update = max_update
        self.feas_violation = feas_violation


class ProjectionError(HdinferError):
    """The projection LP failed or returned an infeasible point."""


class UnsupportedProjectionError(HdinferError):
    """No closed form or LP route for this (hypothesis set, subspace) pair."""


class PipelineError(HdinferError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
