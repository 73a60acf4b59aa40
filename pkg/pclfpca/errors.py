"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps these onto exit codes: validation problems exit with 2,
numerical failures with 3.
"""

from typing import Optional


class PclFpcaError(Exception):
    """Root of all toolkit errors."""

    exit_code = 1


class ValidationError(PclFpcaError, ValueError):
    """Invalid input, configuration or argument."""

    exit_code = 2


class DatasetFormatError(ValidationError):
    """Structurally malformed dataset file (ragged rows, empty table)."""


class DatasetParseError(ValidationError):
    """A cell that is not a finite number."""

    def __init__(self, message: str, row: int, column: int):
        super().__init__(f"{message} (row {row}, column {column})")
        self.row = row
        self.column = column


class DimensionError(ValidationError):
    """Sizes that cannot support the requested computation."""


class NumericalError(PclFpcaError, ArithmeticError):
    """A numerical procedure failed or produced non-finite values."""

    exit_code = 3

    def __init__(
        self,
        message: str,
        sweep: Optional[int] = None,
        parameter: Optional[str] = None,
    ):
        detail = message
        if sweep is not None:
            detail = f"{detail} at sweep {sweep}"
        if parameter:
            detail = f"{detail} (parameter {parameter})"
        super().__init__(detail)
        self.message = message
        self.sweep = sweep
        self.parameter = parameter


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, PclFpcaError):
        return exc.exit_code
    if isinstance(exc, (FileNotFoundError, NotADirectoryError)):
        return ValidationError.exit_code
    return 1
