"""Exception types shared across the package."""


class DetectionTimeError(Exception):
    pass


class ConfigError(DetectionTimeError, ValueError):
    """Inconsistent or invalid run configuration."""


class DomainError(DetectionTimeError, ValueError):
    """A query position lies outside the computational box."""


class StencilError(DetectionTimeError, ValueError):
    """Grid too small for the requested finite-difference stencil."""


class ModeError(DetectionTimeError, ValueError):
    """Operation called on a field or detector of the wrong kind."""


class SolverFailure(DetectionTimeError, RuntimeError):
    """The linear solver did not reach the requested residual."""

    def __init__(self, message, residual=float("nan"), step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class OracleInvalid(DetectionTimeError, RuntimeError):
    """A reference computation violated its own validity conditions."""
