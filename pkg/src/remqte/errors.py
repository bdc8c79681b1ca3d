"""Exception hierarchy shared by all modules."""


class RemQteError(Exception):
    """Base class for errors raised by remqte."""


class InvalidParameterError(RemQteError, ValueError):
    pass


class MalformedInputError(RemQteError, ValueError):
    """Input file or array does not have the expected shape or content."""


class DegeneracyError(RemQteError, ArithmeticError):
    """A numerical quantity needed downstream is singular or vanishing."""


class DegenerateCovariatesError(DegeneracyError):
    pass


class DegenerateIndicatorError(DegeneracyError):
    pass


class DegenerateDensityError(DegeneracyError):
    pass


class RejectionBudgetExhausted(DegeneracyError):
    """No assignment met the balance threshold within the attempt budget."""


class CalibrationFailedError(DegeneracyError):
    pass
