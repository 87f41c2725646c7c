"""Exception and warning types raised across the package."""


class InfHorizonError(Exception):
    """Base class for all package errors."""


class NonFiniteError(InfHorizonError, ArithmeticError):
    """A state, integrand or derivative became NaN or infinite."""


class StepUnderflowError(InfHorizonError):
    """The adaptive step size fell below the allowed minimum."""


class OutOfRangeError(InfHorizonError, ValueError):
    """A query time lies outside the span of a stored path."""


class GridMismatchError(InfHorizonError, ValueError):
    """Two paths do not cover the requested times."""


class DimensionMismatchError(InfHorizonError, ValueError):
    pass


class NoConvergenceError(InfHorizonError):
    pass


class NoSamplesError(InfHorizonError, ValueError):
    """No gradient sample survived the filters where one was needed."""


class PointNotInSetError(InfHorizonError, ValueError):
    pass


class EmptyGridError(InfHorizonError, ValueError):
    pass


class DomainError(InfHorizonError, ArithmeticError):
    """Raised for ln of a non-positive number, sqrt of a negative one, or division by zero."""


class ExprSyntaxError(InfHorizonError, SyntaxError):
    """Malformed expression text. ``offset`` is the 0-based byte offset of the problem."""

    def __init__(self, msg, text="", offset=0):
        super().__init__(f"{msg} at offset {offset}")
        self.msg = msg
        self.text = text
        self.offset = offset


class UnknownIdentifierError(InfHorizonError, NameError):
    pass


class NoBracketError(InfHorizonError):
    pass


class NegativeStationaryControlError(InfHorizonError, ValueError):
    pass


class NotASaddleError(InfHorizonError):
    pass


class NoCrossingError(InfHorizonError):
    pass


class ModelError(InfHorizonError, ValueError):
    """A model violates one of its structural hypotheses."""


class SingularTransitionWarning(UserWarning):
    """The transition matrix became ill-conditioned (condition number above 1e12)."""


class EmptyLevelWarning(UserWarning):
    """No sample passed the filters at some level of a limit schedule."""
