"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data
problems exit 2, numerical degeneracies exit 3.
"""


class DataError(ValueError):
    """Malformed or inconsistent input data (CSV rows, dimensions, groups)."""


class DegenerateColumnError(ValueError):
    """A design column cannot be standardized (zero variance / zero norm)."""


class ConfoundedRandomEffectsError(RuntimeError):
    """Random-effect columns lie (numerically) in the span of the selected
    fixed effects, so the variance components are not separable."""


class DegenerateFitError(RuntimeError):
    """A fit collapsed to a degenerate solution (zero noise scale, zero
    tuning parameter, all-zero estimator covariance)."""


class ConvergenceError(RuntimeError):
    """An iterative solver exhausted its iteration budget.

    Carries the last iterate and the worst KKT residual so callers can
    inspect how close the solver got.
    """

    def __init__(self, message, beta=None, kkt_residual=None):
        super().__init__(message)
        self.beta = beta
        self.kkt_residual = kkt_residual


class PipelineError(RuntimeError):
    """A stage of the end-to-end inference pipeline failed.

    ``stage`` names the failing stage; ``__cause__`` holds the original
    exception.
    """

    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
