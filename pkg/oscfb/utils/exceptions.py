"""
Exception hierarchy shared by the physics, simulation and CLI layers.
"""
from typing import Optional


class OscfbError(Exception):
    """Base class for all errors raised by oscfb."""


class ParameterError(OscfbError, ValueError):
    """A model or configuration parameter violates one of its invariants."""


class DelayGridError(ParameterError):
    """The control delay is not an integer multiple of the time step."""


class SingularMatrixError(OscfbError, ArithmeticError):
    """
    Linear system is singular to working precision.

    Args:
        rcond: Estimated reciprocal condition number of the matrix
    """

    def __init__(self, rcond: float, message: Optional[str] = None):
        self.rcond = rcond
        super().__init__(message or f"singular matrix (rcond={rcond:.3e})")


class ConvergenceError(OscfbError, ArithmeticError):
    """Eigenvalue iteration did not converge."""

    def __init__(self, message: str = "no convergence"):
        super().__init__(message)


class PositivityLostError(OscfbError, ArithmeticError):
    """A covariance lost positive definiteness during integration."""

    def __init__(self, time: float, det: float):
        self.time = time
        self.det = det
        super().__init__(f"positivity lost at t={time:.6g} (det={det:.3e}); reduce dt")


class NoTransitionError(OscfbError):
    """A one-axis sweep shows a single stability class everywhere."""

    def __init__(self, message: str = "no transition"):
        super().__init__(message)


class BoundarySearchError(OscfbError):
    """A point needed by a boundary search could not be classified."""
