"""Exception hierarchy shared across the toolkit."""


class SoftRomError(Exception):
    """Base class for all softrom errors."""


class DegenerateGeometryError(SoftRomError):
    """Edge endpoints (or cable attachment/anchor) numerically coincide."""


class IntegrationError(SoftRomError):
    """The implicit step's linear system could not be solved."""


class DivergenceError(SoftRomError):
    """Simulation state became non-finite."""


class EquilibriumError(SoftRomError):
    """Newton iteration for a static equilibrium did not converge."""


class DimensionError(SoftRomError):
    """Inconsistent array dimensions between components."""


class DegenerateDataError(SoftRomError):
    """Snapshot or spectrum data carries no usable information."""


class ModelBuildError(SoftRomError):
    """Reduced-order model assembly failed (e.g. singular reduced mass)."""


class DiscretizationError(SoftRomError):
    """Matrix exponential discretization failed or overflowed."""


class QpSolverError(SoftRomError):
    """QP backend failed to reach the required accuracy."""


class EstimatorError(SoftRomError):
    """Estimator update hit a numerically singular innovation covariance."""


class GainSynthesisError(SoftRomError):
    """Riccati solve failed or produced an unstable closed loop."""


class ConfigError(SoftRomError):
    """Invalid, inconsistent, or unknown configuration content."""


class StageError(SoftRomError):
    """Wraps a failure with the pipeline stage that produced it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
