"""Exception and warning classes shared across the package."""


class MetaBFError(Exception):
    """Base class for all errors raised by this package."""


# --- dataset construction -------------------------------------------------

class DataError(MetaBFError):
    """Base class for dataset validation failures."""


class NonPositiveSE(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class DuplicateId(DataError):
    pass


class MissingYear(DataError):
    pass


class TooFewStudies(DataError):
    pass


# --- prior specification --------------------------------------------------

class PriorError(MetaBFError):
    """Base class for prior specification/evaluation failures."""


class NoDefaultForScale(PriorError):
    pass


class MissingContext(PriorError):
    pass


class MissingSampleSizes(PriorError):
    pass


class OutsideSupport(PriorError):
    pass


class ImproperPrior(PriorError):
    pass


class ImproperUnderBMA(PriorError):
    pass


class PriorNotIndependent(PriorError):
    pass


class OutOfRange(PriorError):
    pass


class FitDiverged(PriorError):
    pass


# --- numerical evaluation -------------------------------------------------

class NumericalError(MetaBFError):
    """Base class for numerical failures in marginal-likelihood evaluation."""


class NonPositiveVariance(NumericalError):
    pass


class QuadratureNotConverged(NumericalError):
    def __init__(self, message: str, achieved: float | None = None):
        super().__init__(message)
        self.achieved = achieved


class NonFiniteMarginal(NumericalError):
    pass


class DegenerateWeights(NumericalError):
    pass


class ConstantClassMismatch(NumericalError):
    """Two log marginals carry incompatible improper-prior constants."""


class InvalidAlpha(MetaBFError):
    pass


class ConfigParse(MetaBFError):
    pass


# --- warnings ---------------------------------------------------------------

class MetaBFWarning(UserWarning):
    pass


class MissingNRequiredLater(MetaBFWarning):
    """Sample sizes absent; the unit-information prior will be unavailable."""


class NoConvergence(MetaBFWarning):
    """Iterative estimator hit its iteration cap; a fallback value is used."""
