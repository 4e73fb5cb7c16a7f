"""Exception types raised across the package."""


class HtmetaError(Exception):
    """Base class for all package errors."""


class NonFinite(HtmetaError):
    """A gradient, flow or iterate became NaN or infinite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NoConvergence(HtmetaError):
    """Gradient flow did not reach a minimum before ``t_max``."""


class Unsupported(HtmetaError):
    """Operation is not defined for this noise model or landscape."""


class DegenerateThreshold(HtmetaError):
    """``r(i)/b`` is an integer, so the field boundary sits exactly at the jump reach."""


class Unbounded(HtmetaError):
    """A field has no exterior, so its jump width is undefined."""


class DegenerateGeometry(HtmetaError):
    """Jump measure puts non-negligible mass on field boundaries."""


class HorizonExceeded(HtmetaError):
    """No exit happened within the configured number of steps."""


class SingularSystem(HtmetaError):
    """Absorption system has no unique solution."""


class RateSumMismatch(HtmetaError):
    """Row rates do not add up to the total exit rate."""


class InsufficientEvents(HtmetaError):
    """Too few transitions to estimate a kernel row."""


class InsufficientInput(HtmetaError):
    """Jump-process input ends before the requested time."""


class OutOfHorizon(HtmetaError):
    """Requested time lies beyond the recorded trajectory."""


class ConfigError(HtmetaError):
    """Invalid experiment configuration."""
