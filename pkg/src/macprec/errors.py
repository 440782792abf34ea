"""Exception types mapped to CLI exit codes by the harness."""

__all__ = [
    "ResourceCapError",
    "ConvergenceError",
    "StaleStateError",
    "ValidationFailure",
]


class ResourceCapError(RuntimeError):
    """A configured resource cap (e.g. joint alphabet size) was exceeded."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to converge; carries the best residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class StaleStateError(RuntimeError):
    """Cached fixed-point states do not match the current precoders."""


class ValidationFailure(RuntimeError):
    """An exact-vs-asymptotic validation run exceeded its gap tolerance."""
