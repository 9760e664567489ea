"""Exception types shared across the package."""


class DistributedLqrError(Exception):
    """Base class for all errors raised by this package."""


class GraphValidationError(DistributedLqrError):
    """Communication graph is malformed or violates a connectivity requirement."""


class ScheduleValidationError(DistributedLqrError):
    """System schedule violates an invertibility/definiteness requirement.

    Carries the offending report in ``report`` when available.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class RecursionBreakdownError(DistributedLqrError):
    """A recursion matrix lost positive definiteness at a specific step/agent."""

    def __init__(self, step, agent, detail=""):
        msg = f"positive definiteness lost at step k={step}, agent {agent}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.step = step
        self.agent = agent


class StationaryConvergenceError(DistributedLqrError):
    """Fixed-point iteration exceeded its iteration budget."""

    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = tuple(residual_history)


class ConsistencyError(DistributedLqrError):
    """Per-agent virtual states stopped summing to the plant state."""


class LocalityError(DistributedLqrError):
    """An agent update required data from outside its neighborhood."""


class ConsensusConvergenceError(DistributedLqrError):
    """Initial-state consensus exceeded its iteration budget."""

    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = tuple(residual_history)


class ObservationRankError(DistributedLqrError):
    """Stacked observation matrix does not have full column rank."""


class ConfigError(DistributedLqrError):
    """Experiment configuration is invalid; ``field`` names the culprit."""

    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")
        self.field = field
