"""Exception and warning types raised across the package."""


class LrvbError(Exception):
    """Base class for all package errors."""


class DomainError(LrvbError, ValueError):
    """Parameters fall outside the admissible region of a family or model."""


class NoConvergence(LrvbError, RuntimeError):
    """An iterative numerical routine failed to converge."""


class InnerNoConvergence(NoConvergence):
    pass


class MaxSweepsExceeded(NoConvergence):
    pass


class LayoutMismatch(LrvbError, ValueError):
    pass


class DimensionMismatch(LrvbError, ValueError):
    pass


class SingularSystem(LrvbError, ArithmeticError):
    pass


class ConfigError(LrvbError, ValueError):
    pass


class NumericalError(LrvbError, ArithmeticError):
    pass


class TooFewDraws(LrvbError, ValueError):
    pass


class DimensionTooLarge(LrvbError, ValueError):
    pass


class LabelSwitchDetected(LrvbError):
    pass


class EssTooLow(LrvbError):
    pass


class NotPositiveDefiniteWarning(RuntimeWarning):
    """The corrected covariance has a negative eigenvalue."""


class AcceptanceOutOfRange(RuntimeWarning):
    """Metropolis acceptance rate ended outside the healthy band."""


class DegenerateChainWarning(RuntimeWarning):
    pass
