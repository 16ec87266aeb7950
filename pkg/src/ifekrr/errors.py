"""Exception hierarchy.

Every error raised by the library derives from :class:`IfeKrrError`; the CLI
maps the three families below onto process exit codes.
"""


class IfeKrrError(Exception):
    """Base class for all library errors."""

    exit_code = 1
    kind = "error"


class InputError(IfeKrrError, ValueError):
    """Malformed or inconsistent user input (shapes, files, levels)."""

    exit_code = 2
    kind = "input_error"


class SpecError(InputError):
    """Invalid kernel specification or kernel-string syntax."""

    kind = "spec_error"


class BalanceError(InputError):
    """Panel is not balanced: cells missing or duplicated."""

    kind = "balance_error"


class DuplicateCellError(BalanceError):
    """The same (unit, time) cell appears more than once."""

    kind = "duplicate_cell"


class ParseError(InputError):
    """A field could not be read as a finite number."""

    kind = "parse_error"


class NumericError(IfeKrrError, ArithmeticError):
    """A linear-algebra step failed or produced a degenerate quantity."""

    exit_code = 3
    kind = "numeric_error"


class RankDeficiencyError(NumericError):
    """The regressor matrix Z does not have full column rank."""

    kind = "rank_deficiency"

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class DegenerateError(NumericError):
    """A quantity that must be strictly positive is (numerically) zero."""

    kind = "degenerate"


class SelectionError(NumericError):
    """GCV could not evaluate any grid point."""

    kind = "selection_error"


class ResourceError(IfeKrrError, MemoryError):
    """A problem size exceeds a configured cap."""

    exit_code = 4
    kind = "resource_error"
