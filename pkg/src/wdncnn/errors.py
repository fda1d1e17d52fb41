"""Exception types shared across the package."""


class WDnCNNError(Exception):
    """Base class for all package errors."""


class ShapeError(WDnCNNError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(WDnCNNError, ValueError):
    """An argument lies outside the operation's domain."""


class IntegrityError(WDnCNNError):
    """A stored artifact (filter table, checkpoint) failed verification."""


class NumericError(WDnCNNError, ArithmeticError):
    """A computation produced non-finite values."""


class UnknownFilterError(WDnCNNError, LookupError):
    """Requested filter bank does not exist."""
