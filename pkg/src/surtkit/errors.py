"""Exception types shared across the toolkit.

CLI exit-code mapping: UsageError -> 1, DataError -> 2, NumericalError -> 3.
"""


class SurtError(Exception):
    """Base class for all toolkit errors."""


class UsageError(SurtError):
    """Bad configuration or command-line usage."""


class ShapeError(SurtError):
    """Tensor shape mismatch; message names the offending op/node."""


class NumericalError(SurtError):
    """Non-finite values or diverging optimization."""


class DataError(SurtError):
    """Malformed or missing on-disk data (manifests, feature files)."""


class OverlapError(DataError):
    """More than two utterances active at the same frame."""


class LabelSpaceError(DataError):
    """Relative speaker labels exceed the configured maximum."""
