"""Exception types shared across the package."""


class IntegrationDiverged(RuntimeError):
    """A state component became non-finite during integration.

    Carries the failing step index and, for ensemble runs, the realization.
    """

    def __init__(self, step: int, realization: int | None = None):
        self.step = step
        self.realization = realization
        where = f"step {step}"
        if realization is not None:
            where += f", realization {realization}"
        super().__init__(f"integration diverged (non-finite state) at {where}")


class NoEquilibrium(ValueError):
    """Mean mechanical power meets or exceeds the maximum electric power."""


class IndexOutOfRange(IndexError):
    """A (variable, time-index) entry does not exist in the ensemble grid."""


class FormatVersionMismatch(RuntimeError):
    """Ensemble container written by an incompatible (newer) format version."""


class ChecksumMismatch(RuntimeError):
    """Ensemble container is truncated or corrupted."""


class SingularPrior(RuntimeError):
    """Observation covariance could not be factorized at the maximum nugget."""


class DimensionMismatch(ValueError):
    """Inconsistent shapes or index sets between related inputs."""


class FitFailed(RuntimeError):
    """Every hyperparameter search start failed factorization."""


class AlignmentError(ValueError):
    """Forecast targets do not align with the truth trajectory grid."""


class ConfigError(ValueError):
    """Invalid or missing configuration value.

    `field` names the offending entry as ``section.key``.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
