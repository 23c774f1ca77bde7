"""Exception hierarchy.

The CLI maps :class:`DataError` and :class:`ValidationError` to exit code 2
and :class:`NumericalError` to exit code 3.
"""

from __future__ import annotations


class DceeError(Exception):
    """Base class for all package errors."""


class DataError(DceeError, ValueError):
    """Malformed input file or inconsistent data structure."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ValidationError(DceeError, ValueError):
    """A dataset failed :func:`dcee.data.validate` before estimation."""

    def __init__(self, report):
        self.report = report
        head = "; ".join(str(i) for i in report.issues[:5])
        more = len(report.issues) - 5
        if more > 0:
            head += f"; ... and {more} more"
        super().__init__(f"dataset failed validation: {head}")


class SpecError(DceeError, ValueError):
    """Invalid estimand, learner, or benchmark configuration."""


class NumericalError(DceeError, ArithmeticError):
    """Singular or ill-conditioned linear system, or an empty treatment arm."""


class SingularMatrixError(NumericalError):
    def __init__(self, what: str, cond: float, seed: int | None = None):
        self.cond = cond
        self.seed = seed
        msg = f"{what} is singular or ill-conditioned (condition number {cond:.3e})"
        if seed is not None:
            msg += f" [seed={seed}]"
        super().__init__(msg)


class EmptyArmError(NumericalError):
    """Too few eligible rows in one treatment arm to fit the outcome model."""
