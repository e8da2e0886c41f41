"""Exception hierarchy shared by all dropkit modules."""


class DropkitError(Exception):
    """Base class for domain errors (mapped to exit code 1 by the CLI)."""


class InvalidSubset(DropkitError, IndexError):
    pass


class NumericalOverflow(DropkitError, FloatingPointError):
    pass


class SingularHessian(DropkitError, ArithmeticError):
    pass


class LeverageAtOne(DropkitError, ArithmeticError):
    pass


class NonConvexBall(DropkitError):
    pass


class QuadratureFailure(DropkitError):
    pass


class ZeroTheta(DropkitError, ValueError):
    pass


class KTooLarge(DropkitError, ValueError):
    pass


class DimensionMismatch(DropkitError, ValueError):
    pass


class InsufficientPoints(DropkitError, ValueError):
    pass


class ZeroError(DropkitError, ValueError):
    pass


class MaxIterExceeded(RuntimeWarning):
    """Warned (not raised) when a solver stops before reaching its tolerance."""
