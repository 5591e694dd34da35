"""Exception and warning types raised across the package."""


class NLSError(Exception):
    """Base class for all package errors."""


class OutOfRange(NLSError, ValueError):
    pass


class DomainExceeded(NLSError, ValueError):
    pass


class ZeroField(NLSError, ValueError):
    pass


class NonFinite(NLSError, FloatingPointError):
    pass


class UnsupportedDimension(NLSError, ValueError):
    pass


class LadderEmpty(NLSError, ValueError):
    pass


class DegenerateField(NLSError, ValueError):
    pass


class InsufficientSampling(NLSError, ValueError):
    pass


class RangeExceeded(NLSError, ValueError):
    pass


class LinearSolveFailure(NLSError, RuntimeError):
    pass


class InsufficientDecade(NLSError, ValueError):
    pass


class StiffnessFailure(NLSError, RuntimeError):
    pass


class BisectionFailure(NLSError, RuntimeError):
    pass


class InsufficientRange(NLSError, ValueError):
    pass


class NoBlowup(NLSError, RuntimeError):
    pass


class ChannelNotFound(NLSError, LookupError):
    pass


class InsufficientDepth(NLSError, ValueError):
    pass


class UnresolvedTailWarning(UserWarning):
    """The field is not negligible at the outer boundary of its grid."""
