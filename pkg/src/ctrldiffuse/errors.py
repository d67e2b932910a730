"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A parameter or precondition check failed before any computation ran."""


class BoundHypothesisError(ValidationError):
    """A closed-form bound was requested outside the hypothesis it needs.

    The message names the violated condition so callers can surface it.
    """


class ModelEvaluationError(RuntimeError):
    """A model callable produced a non-finite value."""

    def __init__(self, message, x=None, u=None):
        super().__init__(message)
        self.x = x
        self.u = u


class NonConvergenceError(RuntimeError):
    """An iterative solve hit its iteration cap; carries the last sup-change."""

    def __init__(self, message, last_delta):
        super().__init__(message)
        self.last_delta = last_delta


class ExplorationWarning(UserWarning):
    """Exploration left state-action pairs unvisited or unreachable."""
