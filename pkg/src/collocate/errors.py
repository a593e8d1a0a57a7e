"""Exception and warning types raised by the collocation toolkit."""


class CollocationError(Exception):
    """Base class for all errors raised by this package."""


class InvalidCloud(CollocationError, ValueError):
    """Point cloud has bad shape, non-finite entries or non-positive radii."""


class OrderOutOfRange(CollocationError, ValueError):
    """Operator multi-index lies outside the selected index set."""


class SingularMoment(CollocationError, ArithmeticError):
    """Moment matrix (or least-squares system) is numerically rank deficient.

    Attributes
    ----------
    rank : int or None
        Numerical rank found by the pivoted factorization.
    size : int or None
        Number of unknowns.
    """

    def __init__(self, message, rank=None, size=None):
        super().__init__(message)
        self.rank = rank
        self.size = size


class SingularBordered(SingularMoment):
    """Bordered system carrying a hard boundary constraint is singular."""


class UnsupportedOrder(CollocationError, ValueError):
    """Requested derivative order is not available for this route."""


class UnsupportedCombination(CollocationError, ValueError):
    """Basis family, dimension and order combination is not supported."""


class UnknownMethod(CollocationError, KeyError):
    """Method name is not one of the known presets."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown method"


class InvalidParams(CollocationError, ValueError):
    """Method parameters are inconsistent or out of range."""


class ZeroDenominator(CollocationError, ZeroDivisionError):
    """A normalising sum vanished (for example an empty one-sided stencil)."""


class LinearSolveFailure(CollocationError, RuntimeError):
    """Global sparse solve did not reach the requested tolerance."""


class NonContractive(UserWarning):
    """Iterative correction sweeps grew instead of shrinking."""
