"""Exception hierarchy shared by every module."""


class StegDciError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""

    exit_code = 3


class InvalidArgument(StegDciError, ValueError):
    exit_code = 2


class ParseError(StegDciError):
    pass


class UnsupportedFormat(StegDciError):
    pass


class UnsupportedVersion(StegDciError):
    pass


class IoError(StegDciError, OSError):
    pass


class NumericalError(StegDciError, ArithmeticError):
    exit_code = 4


class AssumptionViolated(StegDciError, ValueError):
    """Raised when a sign prediction is requested outside its valid range (e.g. alpha > 1/2)."""

    exit_code = 2


class DescriptorMismatch(StegDciError):
    pass
