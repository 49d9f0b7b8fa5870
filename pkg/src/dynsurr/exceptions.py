"""Exception types shared across the package."""


class DynsurrError(Exception):
    """Base class for all package errors."""


# --- data / file errors -----------------------------------------------------

class MalformedRow(DynsurrError):
    """A CSV row could not be parsed or has the wrong arity."""


class DimensionMismatch(DynsurrError):
    """Vector or matrix dimensions are inconsistent with the dataset schema."""


class DuplicatePeriod(DynsurrError):
    """Period indices within a unit are duplicated or have gaps."""


class MissingOutcome(DynsurrError):
    """An outcome value required by the computation is absent."""


class SettingMissing(DynsurrError):
    """The dataset lacks a setting (experimental/observational) the caller needs."""


class NoExperimentalUnits(SettingMissing):
    """Effect aggregation requires at least one experimental unit."""


# --- learner errors ---------------------------------------------------------

class SingularDesign(DynsurrError):
    """Normal equations are singular and the ridge fallback is disabled."""


class EmptyGrid(DynsurrError):
    """A hyperparameter grid is empty."""


class SingleClass(DynsurrError):
    """Logistic fit received labels from a single class."""


class TooFewUnits(DynsurrError):
    """Not enough units per setting to form two folds."""


# --- solver / inference errors ----------------------------------------------

class SingularBlock(DynsurrError):
    """A diagonal block of the moment Jacobian is numerically singular.

    Signals violated average overlap at the stored period.
    """

    def __init__(self, period: int, min_singular_value: float, tol: float):
        self.period = period
        self.min_singular_value = min_singular_value
        self.tol = tol
        super().__init__(
            f"moment block for period {period} is singular "
            f"(min sv {min_singular_value:.3e} < tol {tol:.3e}); "
            "treatment variation conditional on state is insufficient"
        )


class SingularCovariance(DynsurrError):
    """A conditional treatment covariance matrix is singular."""


class SingularJacobian(DynsurrError):
    """The stacked moment Jacobian cannot be inverted."""


# --- data generation errors -------------------------------------------------

class UnstableB(DynsurrError):
    """State transition matrix has spectral radius >= 1."""


class UnstableCompanion(DynsurrError):
    """Lag-polynomial companion matrix has spectral radius >= 1."""


class NotSPD(DynsurrError):
    """A matrix expected to be symmetric positive definite is not."""


class InvarianceViolation(DynsurrError):
    """Settings were configured with different shared-dynamics matrices."""


# --- harness errors ----------------------------------------------------------

class ConfigError(DynsurrError):
    """Experiment configuration is invalid."""


class EmptyResults(DynsurrError):
    """A results file contains no usable rows."""
