"""Exception hierarchy; the CLI maps each class to a distinct exit code."""


class OdoequivError(Exception):
    """Base class for all package errors."""


class StreamExhausted(OdoequivError):
    """A finite factor stream ran out before the schedule was satisfied."""


class InfeasibleSchedule(OdoequivError):
    """Strict-mode analytic inequalities cannot be satisfied at this stage."""

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = tuple(failures)


class DepthCapExceeded(OdoequivError):
    """A proposed modulus exceeds the configured depth cap."""


class InvariantViolation(OdoequivError):
    """A structural invariant of the construction failed (internal bug)."""


class ArtifactError(OdoequivError):
    """A run artifact is unreadable, corrupt, or from an incompatible version."""
