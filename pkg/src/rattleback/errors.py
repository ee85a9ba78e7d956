"""Exception hierarchy.

Validation problems derive from :class:`ValueError`; numerical breakdowns
derive from :class:`ArithmeticError`.  The CLI maps the first family to exit
code 2 and the second to exit code 3.
"""


class RattlebackError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(RattlebackError, ValueError):
    pass


class NumericalError(RattlebackError, ArithmeticError):
    pass


class NonIntegerLambda(ValidationError):
    """Operation needs y**lambda on all of R^3, i.e. an integer lambda >= 2."""


class SingularPlane(ValidationError):
    """The rescaling y**(1 - lambda) is undefined on the plane y = 0."""


class NotUnimodular(ValidationError):
    pass


class WrongStratum(ValidationError):
    pass


class ParamMissing(ValidationError):
    pass


class BasinViolation(ValidationError):
    pass


class EmptySeries(ValidationError):
    pass


class StepUnderflow(NumericalError):
    pass


class NonFinite(NumericalError):
    pass


class NoCrossings(NumericalError):
    pass


class SeedNotFound(NumericalError):
    pass


class ContinuationStalled(NumericalError):
    pass
