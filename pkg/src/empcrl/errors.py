"""Shared exception types."""


class ContractError(ValueError):
    """An input violates a documented precondition."""


class ConvergenceError(RuntimeError):
    """An iterative routine failed to reach its tolerance.

    Carries the last residual so callers can report diagnostics.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
