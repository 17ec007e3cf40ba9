"""Exception hierarchy shared by all modules."""


class VBNewtonError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(VBNewtonError, ValueError):
    pass


class DegenerateRetraction(VBNewtonError):
    """The retraction formula is singular at the requested tangent vector."""


class TransportError(VBNewtonError):
    """A vector (back-)transport could not be evaluated."""


class OutOfInjectivityRegion(TransportError):
    """The target point is outside the region where the inverse retraction is defined."""


class SingularTransport(TransportError):
    pass


class UnsupportedKind(VBNewtonError):
    """Connection kind and bundle kind do not fit together."""


class RankDeficiency(VBNewtonError):
    pass


class SingularNewtonOperator(VBNewtonError):
    """The reduced Newton matrix is singular or too badly conditioned to solve."""

    def __init__(self, message, condition=float("inf")):
        super().__init__(message)
        self.condition = condition


class ZeroNewtonDirection(VBNewtonError, ZeroDivisionError):
    pass


class EvaluationFailure(VBNewtonError):
    """User-supplied problem code raised an exception."""
