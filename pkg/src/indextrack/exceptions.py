"""Exception hierarchy shared by all modules."""


class IndexTrackError(Exception):
    """Base class for errors raised by this package."""


class PanelFormatError(IndexTrackError):
    """A CSV row could not be parsed."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class PanelValidationError(IndexTrackError):
    """Parsed panel data violates an invariant."""


class MissingDataError(IndexTrackError):
    """A price needed for a return is absent."""

    def __init__(self, instrument, step, endpoint):
        self.instrument = instrument
        self.step = step
        self.endpoint = endpoint
        super().__init__(f"no price for {instrument} at step {step} ({endpoint} of horizon)")


class DegenerateRegressorError(IndexTrackError, ValueError):
    """All regressor values are equal, so no slope is defined."""


class TargetUnavailableError(IndexTrackError):
    """A supervised target cannot be formed for this (instrument, step)."""


class EstimateUnavailableError(IndexTrackError):
    """Not enough history for a historical estimate."""


class FeatureUnavailableError(IndexTrackError):
    """Not enough history to build an input tensor."""


class DegenerateDistributionError(IndexTrackError, ValueError):
    """Fewer than two distinct values to fit an empirical CDF."""


class EmptyBatchError(IndexTrackError, ValueError):
    """An error metric was asked for over no observations."""


class InsufficientDataError(IndexTrackError):
    """A training block is empty."""


class ShapeMismatchError(IndexTrackError, ValueError):
    """Input tensor does not match the grid a model was fitted on."""


class ModelingError(IndexTrackError):
    """A portfolio problem cannot be assembled from the given inputs."""


class InfeasibleProblemError(IndexTrackError):
    """The portfolio MILP has no feasible point.

    ``constraints`` names the pair of constraint groups that cannot be
    satisfied together.
    """

    def __init__(self, message, constraints=()):
        self.constraints = tuple(constraints)
        super().__init__(message)


class SolverTimeoutError(IndexTrackError):
    """The solver hit its limit before finding any feasible point."""


class ScheduleError(IndexTrackError, ValueError):
    """Episode parameters violate ``T_E > T_D > T_A + T_C >= 1`` or the calendar."""


class LookAheadError(IndexTrackError, AssertionError):
    """A fitted artefact was given data from outside its allowed block."""


class ConfigError(IndexTrackError):
    """A run configuration field is missing or invalid."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
