class EikopathError(Exception):
    pass


class MetricEvaluationError(EikopathError, ValueError):
    """Metric returned non-finite entries."""


class ConditionViolationError(EikopathError, ValueError):
    """A sampled point violates ellipticity or another structural condition."""


class DomainError(EikopathError, ValueError):
    pass


class PreconditionError(EikopathError, ValueError):
    pass


class NonConvergenceError(EikopathError, RuntimeError):
    """Iteration cap reached; ``best`` carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class IntegrationError(EikopathError, RuntimeError):
    pass


class ConstructionError(EikopathError, ValueError):
    pass


class ConfigError(EikopathError, ValueError):
    pass
