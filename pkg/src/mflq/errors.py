"""Exception types shared across the package."""


class MflqError(Exception):
    """Base class for all package errors."""


class OutOfDomainError(MflqError):
    """A time argument falls outside the schedule/model domain [0, T]."""


class ShapeError(MflqError):
    """An array argument does not have the shape the model dictates."""


class InsufficientSampleError(MflqError):
    """An empirical statistic was requested from fewer than 2 particles."""


class ModelDocumentError(MflqError):
    """A JSON model document is malformed; the message names the field."""


class RiccatiBreakdownError(MflqError):
    """The backward Riccati integration failed (positivity loss, singular
    U/V, or a non-finite state).

    Attributes
    ----------
    time : float
        Time at which the failure was detected.
    eigenvalue : float or None
        Offending smallest eigenvalue of U or V, when applicable.
    """

    def __init__(self, message: str, time: float, eigenvalue: float | None = None):
        super().__init__(message)
        self.time = time
        self.eigenvalue = eigenvalue


class CovarianceInstabilityError(MflqError):
    """Moment propagation produced a covariance eigenvalue below -1e-6."""

    def __init__(self, message: str, time: float, eigenvalue: float):
        super().__init__(message)
        self.time = time
        self.eigenvalue = eigenvalue


class SimulationDivergedError(MflqError):
    """A particle state became non-finite during Euler-Maruyama stepping."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step
