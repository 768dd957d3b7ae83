"""
Exception tree for mpp_verifier.

Everything raised on purpose derives from MppError so the CLI can map it
to an exit code. Suites never raise for a failed check -- failures are
report entries. They only raise when a computation could not be done.
"""


class MppError(Exception):
    """Base class for all mpp_verifier errors."""


class ConfigError(MppError):
    """Scenario file missing, unreadable or not matching the schema."""


class ValidationError(MppError, ValueError):
    """Invalid input to a core type (events, grids, queries)."""


class OutOfRangeError(ValidationError):
    """A query time lies past the path horizon."""


class UnsupportedOperationError(MppError):
    """Operation not defined for this variant (e.g. density of an atom)."""


class DomainError(MppError, ValueError):
    """A transform or rate is undefined / nonpositive where it is needed."""


class NullSetError(DomainError):
    """Theta falls in the kernel's declared null set."""


class AssumptionViolation(MppError):
    """The density-at-origin limit is nonpositive or did not converge."""

    def __init__(self, message, theta=None, estimate=None):
        super().__init__(message)
        self.theta = theta
        self.estimate = estimate


class NumericError(MppError):
    """A numeric routine failed. Exit code 3 at the CLI."""


class QuadratureError(NumericError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, value=None, error=None, interval=None):
        super().__init__(message)
        self.value = value
        self.error = error
        self.interval = interval

    def diagnostics(self):
        return {"value": self.value, "error": self.error, "interval": self.interval}


class ExplosionError(NumericError):
    """A simulated path produced more events than the guard allows."""


class UndecidableEventError(ValidationError):
    """A joint interarrival event cannot be decided from truncated paths."""


class CheckError(MppError):
    """A sub-operation of a suite failed; carries the check id."""

    def __init__(self, check_id, cause):
        super().__init__(f"{check_id}: {type(cause).__name__}: {cause}")
        self.check_id = check_id
        self.cause = cause
