"""Exception hierarchy shared by every module.

Each class carries a stable ``exit_code`` so the command-line front end can map
failures to distinct process statuses.
"""


class DeformedRMTError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class InvalidInputError(DeformedRMTError, ValueError):
    """Malformed matrix, measure or model description."""

    exit_code = 3


class DomainError(DeformedRMTError, ValueError):
    """An evaluation point lies outside the domain of the requested function."""

    exit_code = 4


class SingularityError(DomainError):
    """A kernel denominator vanished (up to tolerance) at an atom."""

    exit_code = 5


class ConvergenceError(DeformedRMTError, RuntimeError):
    """An iterative solver exhausted its budget.

    ``index`` identifies the failing eigenvalue / grid point when meaningful and
    ``residual`` is the last residual seen.
    """

    exit_code = 6

    def __init__(self, message, index=None, residual=None):
        super().__init__(message)
        self.index = index
        self.residual = residual


class ConsistencyError(DeformedRMTError, RuntimeError):
    """An internal identity that must hold did not (signals misuse upstream)."""

    exit_code = 7
