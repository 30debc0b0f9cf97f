"""Exception hierarchy shared across the simulator."""


class SatomError(Exception):
    """Base class for all simulator errors."""


class MalformedSpec(SatomError):
    """A topology or scenario section is structurally invalid."""


class NoPath(SatomError):
    pass


class NoKey(SatomError):
    """The node does not hold the key a ciphertext was sealed with."""


class AuthFailure(SatomError):
    """Ciphertext integrity check failed (tampered frame)."""


class PastTime(SatomError):
    """An event was scheduled before the current simulated clock."""


class StaleEpoch(SatomError):
    """A router received an update that is not fresher than its current epoch."""


class UnknownEpoch(SatomError):
    pass


class ValueSpaceExhausted(SatomError):
    """No unused routing-field value is left for a fresh mapping."""


class CoexistenceViolation(SatomError):
    """Concurrently active epochs disagree on the next hop of a shared value."""


class NoObservations(SatomError):
    pass


class InsufficientSamples(SatomError):
    pass


class StaleFreshness(SatomError):
    """A plaintext command failed the freshness (sequence number) check."""


class WindowAlreadyOpen(SatomError):
    pass


class NoOpenWindow(SatomError):
    pass


class NeverRecovered(SatomError):
    """The trace ends before the satellite reaches safe mode."""


class NegativeTime(SatomError):
    pass


class NonConvergence(SatomError):
    pass


class ParseError(SatomError):
    pass


class ValidationError(SatomError):
    """Scenario failed cross-validation; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
