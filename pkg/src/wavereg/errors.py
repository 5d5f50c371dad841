"""Exception types raised across the package."""

from __future__ import annotations


class WaveError(Exception):
    """Base class for all package errors."""


class DimensionError(WaveError, ValueError):
    pass


class DomainError(WaveError, ValueError):
    pass


class ConfigurationError(WaveError, ValueError):
    pass


class LossOverflowError(WaveError, OverflowError):
    """Raised when exp(z) overflows in the Poisson loss."""

    def __init__(self, index: int, z: float):
        super().__init__(f"exp(z) overflows at index {index} (z={z!r})")
        self.index = index
        self.z = z


class DivergenceError(WaveError, ArithmeticError):
    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class NonConvergenceError(WaveError, ArithmeticError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"ADMM did not converge after {iterations} iterations "
            f"(primal residual {residual:.3e})"
        )
        self.residual = residual
        self.iterations = iterations


class SingularityError(WaveError, ArithmeticError):
    pass


class DataIntegrityError(WaveError, ValueError):
    pass


class DecodeError(WaveError, ValueError):
    def __init__(self, message: str, field: str | None = None):
        text = message if field is None else f"{field}: {message}"
        super().__init__(text)
        self.field = field


class WorkerError(WaveError, RuntimeError):
    """A worker failed; carries the worker id and the original error."""

    def __init__(self, worker_id: int, cause: BaseException):
        super().__init__(f"worker {worker_id} failed: {cause}")
        self.worker_id = worker_id
        self.cause = cause
