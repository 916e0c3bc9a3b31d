"""Exception types raised across the package."""


class NafdError(Exception):
    """Base class for all package errors."""


class ConfigurationError(NafdError, ValueError):
    """Invalid or inconsistent configuration.

    Parameters
    ----------
    message : str
        Description of the problem.
    path : str, optional
        Dotted path of the offending config field.
    """

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class DegenerateInputError(NafdError, ValueError):
    """Input for which the requested quantity is undefined (e.g. zero channel)."""


class IllConditionedError(NafdError, ArithmeticError):
    """Matrix too ill-conditioned for the zero-forcing inverse."""


class SolverError(NafdError, RuntimeError):
    """Fixed-point or linear solve failed.

    Parameters
    ----------
    message : str
        Description of the failure.
    trace : sequence of float, optional
        Residual history of the iteration.
    """

    def __init__(self, message, trace=None):
        self.trace = list(trace) if trace is not None else []
        super().__init__(message)


class RegimeError(SolverError):
    """Deterministic equivalent outside its regime of validity."""


class PartitionError(NafdError, ValueError):
    """Scheduling partition violates the cardinality or disjointness rules."""


class SearchSpaceError(NafdError, ValueError):
    """Exhaustive search space above the configured guard."""
