"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: usage errors exit 1, data errors exit 2,
numeric failures exit 3.
"""


class SlmSpecError(Exception):
    """Base class for all package errors."""


class UsageError(SlmSpecError):
    """Bad arguments or configuration supplied by the caller."""


class DataError(SlmSpecError):
    """Malformed files, dimension mismatches, violated container invariants."""


class NumericError(SlmSpecError):
    """A computation failed: non-finite objective, degenerate fit, no consensus."""
