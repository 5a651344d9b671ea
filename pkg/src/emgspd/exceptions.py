"""Exception hierarchy.

Two families matter to callers: :class:`DataError` (bad or inconsistent input
files, exit code 2 at the command line) and :class:`ParameterError` (bad
arguments from the caller).
"""


class EmgSpdError(Exception):
    """Base class for every error raised by this package."""


class DataError(EmgSpdError, ValueError):
    """Input data is malformed, non-finite or inconsistent."""


class FormatError(DataError):
    """A file does not follow its documented on-disk layout."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TruncationError(FormatError):
    """Payload size disagrees with the header."""


class VocabularyError(DataError):
    """A symbol is not part of the configured phoneme inventory."""

    def __init__(self, symbol, line=None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"unknown phoneme symbol {symbol!r}{where}")
        self.symbol = symbol
        self.line = line


class ManifestError(DataError):
    """A manifest or split file violates its invariants."""


class SegmentTooShortError(DataError):
    """A segment holds fewer samples than one analysis window."""


class ParameterError(EmgSpdError, ValueError):
    """An argument is out of its valid range."""


class DefinitenessError(EmgSpdError, ValueError):
    """A matrix expected to be positive definite is not."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class InfeasibleAlignmentError(EmgSpdError, ValueError):
    """The lattice is too short to emit the requested label sequence."""


class NumericError(EmgSpdError, ArithmeticError):
    """A numerical routine failed (non-convergence, NaN loss)."""
