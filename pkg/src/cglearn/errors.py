"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CGLearnError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CGLearnError, ValueError):
    """Invalid or incomplete configuration (bad parameters, unknown names)."""


class StructuralError(CGLearnError, ValueError):
    """Shape, index or layout mismatch between inputs."""


class PreconditionError(CGLearnError, ValueError):
    """An operation was called on data that does not satisfy its requirements."""


class BlowUpError(CGLearnError, RuntimeError):
    """A simulated trajectory became non-finite."""

    def __init__(self, step: int, message: str | None = None):
        self.step = int(step)
        super().__init__(message or f"simulation blew up at step {self.step}")


class DivergenceError(CGLearnError, RuntimeError):
    """Filter or smoother statistics became non-finite."""

    def __init__(self, step: int, message: str | None = None):
        self.step = int(step)
        super().__init__(message or f"conditional Gaussian recursion diverged at step {self.step}")


class EstimationError(CGLearnError, RuntimeError):
    """Maximum-likelihood estimation could not be carried out."""


class LearningAborted(CGLearnError, RuntimeError):
    """The learning loop stopped on a numerical failure; ``trace`` holds completed iterations."""

    def __init__(self, iteration: int, cause: Exception, trace=None):
        self.iteration = int(iteration)
        self.cause = cause
        self.trace = trace
        super().__init__(f"learning aborted at iteration {self.iteration}: {cause}")
