"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid user-supplied configuration (bad grid spec, dimension mismatch, ...)."""


class ConvergenceError(RuntimeError):
    """An iterative numerical routine failed to reach its tolerance."""

    def __init__(self, message, residual=float("nan"), context=None):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual
        self.context = context


class DegenerateMetricError(RuntimeError):
    """The metric tensor is (numerically) singular where an inverse is needed."""
