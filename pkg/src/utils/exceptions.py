"""Custom exception classes for the application.

Every exception belongs to one of three families. The CLI maps each family
to an exit code: configuration problems exit with 2, data problems with 3
and numerical failures with 4.
"""

from typing import Any, Dict, Optional


class BaseAppException(Exception):
    """Base exception class for all application exceptions."""

    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.details = details or {}
        super().__init__(self.message)


# ----------------------------------------------------------------------
# Configuration
# ----------------------------------------------------------------------

class ConfigurationError(BaseAppException):
    """Raised when there's a configuration error."""

    exit_code = 2


# ----------------------------------------------------------------------
# Data
# ----------------------------------------------------------------------

class DataError(BaseAppException):
    """Raised when input data cannot support the requested operation."""

    exit_code = 3


class MissingColumnError(DataError):
    """Raised when a mapped column is absent from the input file."""
    pass


class ParseFailureError(DataError):
    """Raised when a cell cannot be parsed into its declared domain."""

    def __init__(self, row: int, column: str, value: Any, reason: str):
        self.row = row
        self.column = column
        super().__init__(
            f"Row {row}, column '{column}': {reason} (value={value!r})",
            details={"row": row, "column": column, "value": value},
        )


class EmptyCohortError(DataError):
    """Raised when a cohort has no records."""
    pass


class SingleArmCohortError(DataError):
    """Raised when a treatment-effect operation sees only one arm."""
    pass


class DuplicateIdError(DataError):
    """Raised when patient ids collide within a cohort."""
    pass


class AllZeroWeightsError(DataError):
    """Raised when every observation weight is zero."""
    pass


class GroupTooSmallError(DataError):
    """Raised when a pseudo-observation group has fewer than two patients."""
    pass


class MissingScoreError(DataError):
    """Raised when the external prognostic score is missing for some rows."""

    def __init__(self, rows):
        self.rows = list(rows)
        shown = ", ".join(str(r) for r in self.rows[:10])
        super().__init__(
            f"External score missing for {len(self.rows)} row(s): {shown}",
            details={"rows": self.rows},
        )


class InsufficientLabelsError(DataError):
    """Raised when the untreated cohort cannot support cross-fitting."""
    pass


class SingleClassFoldError(DataError):
    """Raised when a cross-fitting fold contains a single label class."""
    pass


class EmptySubgroupError(DataError):
    """Raised when the treated no-event subgroup is empty."""
    pass


class NoMatchesFoundError(DataError):
    """Raised when no risk bucket contains both arms."""
    pass


class NoEligiblePairsError(DataError):
    """Raised when no center pair survives the survival-gap filters."""
    pass


class ZeroInformativeError(DataError):
    """Raised when a paired test has no nonzero observations."""
    pass


class DegenerateArmError(DataError):
    """Raised when a synthetic draw leaves one arm empty."""
    pass


# ----------------------------------------------------------------------
# Numerics
# ----------------------------------------------------------------------

class NumericalError(BaseAppException):
    """Raised when a solver cannot produce a trustworthy answer."""

    exit_code = 4


class NoEventsError(NumericalError):
    """Raised when a Cox fit sees no weighted events."""
    pass


class SingularDesignError(NumericalError):
    """Raised when the design or information matrix is singular."""
    pass


class NotConvergedError(NumericalError):
    """Raised when an iterative solver exhausts its iteration budget."""
    pass


class InfeasibleError(NumericalError):
    """Raised when balancing constraints cannot be met."""
    pass


# ----------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------

class EmptyReportError(BaseAppException):
    """Raised when a report has nothing to emit."""

    exit_code = 2


class IoFailureError(BaseAppException):
    """Raised when report files cannot be written."""

    exit_code = 3
