"""Exception hierarchy shared across the package."""


class LfsError(Exception):
    """Base class for all package errors."""


class FormatError(LfsError):
    """A binary file does not match its declared layout."""


class DataError(LfsError):
    """Payload values violate an invariant (NaN, negative probability, ...)."""


class IoError(LfsError):
    """Filesystem-level failure while reading or writing an artifact."""


class SpecError(LfsError):
    """A synthetic-corpus spec is internally inconsistent or infeasible."""


class ShapeError(LfsError):
    """Array shapes disagree with the operation's contract."""


class StateError(LfsError):
    """Cached state does not belong to the parameters it is used with."""


class ParamError(LfsError):
    """A scalar argument is outside its valid range."""


class OracleError(LfsError):
    """A captioner oracle returned non-finite output."""


class NumericsError(LfsError):
    """Non-finite values appeared during optimization."""
