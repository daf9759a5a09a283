"""Exception types shared across the solver modules."""


class DueSolveError(Exception):
    """Base class for all errors raised by this package."""


class GridMismatchError(DueSolveError):
    """Operands live on different grids, dimensions, or sampling kinds."""


class CapabilityError(DueSolveError):
    """A required callback (e.g. an analytic Jacobian) was not provided."""


class DivergedError(DueSolveError):
    """The dynamics returned non-finite values during integration."""


class NoConvergenceError(DueSolveError):
    """Iteration cap reached before the requested tolerance.

    Carries the last computed a-posteriori bound in ``bound``.
    """

    def __init__(self, message, bound=None, iterations=None):
        super().__init__(message)
        self.bound = bound
        self.iterations = iterations


class DelayModelError(DueSolveError):
    """The link delay model broke down or cannot be evaluated."""


class FifoViolationError(DelayModelError):
    """Link exit times stopped increasing; carries ``link_id`` and ``time``."""

    def __init__(self, message, link_id=None, time=None):
        super().__init__(message)
        self.link_id = link_id
        self.time = time


class InputError(DueSolveError):
    """A network or scenario file failed validation.

    ``location`` names the offending entity or field, e.g. ``od_pairs[0].Q``.
    """

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location

    def __str__(self):
        base = super().__str__()
        if self.location:
            return f"{self.location}: {base}"
        return base


class ControlBoxWarning(UserWarning):
    """A control left its declared value box; the dynamics were still evaluated."""
