class ConfigError(ValueError):
    """Invalid parameters or configuration (CLI exit code 2)."""


class SolverError(RuntimeError):
    """Direct-problem failure: non-finite field or nonlinear non-convergence."""

    def __init__(self, message, step=None, residual=None):
        super().__init__(message)
        self.step = step
        self.residual = residual


class ObjectiveError(RuntimeError):
    """Objective evaluation failed or returned a non-finite value."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point
