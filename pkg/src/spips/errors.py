"""Exception types shared across the package.

Plain precondition violations on in-process API calls raise ValueError; the
classes here mark failures the command-line layer maps to distinct exit codes.
"""


class SpipsError(Exception):
    """Base class for package-specific failures."""


class FormatError(SpipsError):
    """A serialized artifact (.spwt / .spht) is malformed or truncated."""


class DataError(SpipsError):
    """A manifest, image file, or output location is unusable."""


class NumericError(SpipsError):
    """A computation left its numeric contract (degenerate input, NaN loss)."""
