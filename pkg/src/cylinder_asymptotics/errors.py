"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ArtifactError(Exception):
    exit_code = 3
    kind = "numerical_failure"

    def to_dict(self):
        return {"error": self.kind, "type": type(self).__name__, "message": str(self)}


class ConfigError(ArtifactError):
    exit_code = 2
    kind = "config_error"


class UnsupportedDimensionError(ConfigError):
    pass


class DomainError(ConfigError):
    pass


class ArityError(ConfigError):
    pass


class ShapeError(ConfigError):
    pass


class RegimeError(ConfigError):
    """Requested operation is not defined in this (n, k) regime."""


class PrecisionError(ArtifactError):
    """Quadrature or truncation cannot resolve the request exactly."""


class SingularTrajectoryError(ArtifactError):
    def __init__(self, message, t_blowup=None):
        super().__init__(message)
        self.t_blowup = t_blowup


class ClassificationError(ArtifactError):
    pass


class InsufficientRangeError(ArtifactError):
    pass


class NoiseFloorError(ArtifactError):
    pass


class ConvergenceError(ArtifactError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class ConeViolationError(ArtifactError):
    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class BudgetError(ArtifactError):
    pass


class MatchingError(ArtifactError):
    pass


class StageError(ArtifactError):
    def __init__(self, message, stages=None):
        super().__init__(message)
        self.stages = stages or []


class AcceptanceFailure(ArtifactError):
    exit_code = 4
    kind = "acceptance_failure"
