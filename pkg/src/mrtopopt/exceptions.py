"""Exception hierarchy shared by all modules."""


class TopOptError(Exception):
    """Base class for errors raised by mrtopopt."""


class ConfigurationError(TopOptError, ValueError):
    """Invalid combination of parameters (mesh, element, problem or run settings)."""


class DomainError(TopOptError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class ResourceError(TopOptError, MemoryError):
    """A precomputation would exceed a configured memory cap."""


class InvalidStateError(TopOptError, RuntimeError):
    """An operation was requested on stale or missing state."""


class SolverError(TopOptError, RuntimeError):
    """An iterative or direct solver failed.

    Attributes
    ----------
    history : list of float
        Relative residual norms recorded before the failure (may be empty).
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class LPFailure(SolverError):
    """The LP subproblem could not be solved even after feasibility restoration."""
