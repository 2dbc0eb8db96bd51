"""Exception types shared across the package."""


class LocalMahalError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(LocalMahalError):
    """Vectors of incompatible dimension were combined."""


class Infeasible(LocalMahalError):
    """The margin constraints cannot be satisfied (e.g. every difference
    vector is zero)."""


class IterationLimit(LocalMahalError):
    """The solver hit its sweep cap before reaching the KKT tolerance."""


class ScaleExceeded(LocalMahalError):
    """A test-scale-only routine was called on a problem too large for it."""


class DimensionLimit(LocalMahalError):
    """Dense materialization was requested above the configured dimension cap."""


class ShiftTooLarge(LocalMahalError):
    """Requested pixel shift exceeds half the image extent."""


class AngleTooLarge(LocalMahalError):
    """Requested rotation angle exceeds the small-angle limit."""


class BlankImage(LocalMahalError):
    """An operation requiring nonzero total intensity got a blank image."""


class BadMagic(LocalMahalError):
    """An IDX file starts with the wrong magic number."""


class TruncatedFile(LocalMahalError):
    """An IDX file's payload is shorter than its header claims."""


class ParseError(LocalMahalError):
    """A delimited feature table is malformed.

    Carries the 1-based line number of the offending row.
    """

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InsufficientFolds(LocalMahalError):
    """Pair verification needs at least two folds."""
