"""Exception types shared across the package."""

from __future__ import annotations


class TiltGlmError(Exception):
    """Base class for all errors raised by this package."""


class TargetOutsideHull(TiltGlmError):
    """The requested tilted mean is not strictly inside the support hull.

    No finite tilt exists for such a target, so this is a hard error
    rather than a clamp: clamping would silently corrupt likelihood
    values downstream.
    """


class ToleranceNotReached(TiltGlmError):
    """An iterative solver hit its iteration cap before meeting tolerance."""


class OffSupportResponse(TiltGlmError):
    """Some responses are not atoms of the reference distribution."""

    def __init__(self, indices):
        self.indices = tuple(int(i) for i in indices)
        super().__init__(
            f"responses at indices {self.indices} are not atoms of the "
            "reference distribution (their density is zero)"
        )


class ConstraintViolation(TiltGlmError):
    """A model constraint fails to hold for the requested configuration."""


class HullViolation(ConstraintViolation):
    """Fitted means left the open support hull of the reference distribution."""

    def __init__(self, message, indices=()):
        self.indices = tuple(int(i) for i in indices)
        super().__init__(message)


class NonConvergence(TiltGlmError):
    """A fitting routine failed to converge within its iteration budget."""


class InvalidResponse(TiltGlmError):
    """Responses lie outside the support of the requested family."""


class DegenerateResponse(TiltGlmError):
    """The responses carry no usable variation (all values identical)."""


class ZeroTrueParameter(TiltGlmError):
    """Relative RMSE is undefined for a true parameter equal to zero."""


class TooManyFailures(TiltGlmError):
    """More than the tolerated share of simulation replicates failed."""


class DatasetError(TiltGlmError):
    """A data file could not be loaded or fails basic validation."""
