"""Exception taxonomy shared across the engine."""


class NutriloopError(Exception):
    """Base class for all engine errors."""


class ContractViolation(NutriloopError):
    """A caller broke an operation precondition (schema mismatch, bad arguments)."""


class IntegrityError(NutriloopError):
    """Stored or computed state is internally inconsistent."""


class ConfigurationError(NutriloopError):
    """A config file or fixture reference is missing or malformed."""


class RdaParseError(NutriloopError):
    """A reference table could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ReferenceLookupError(NutriloopError):
    """No (or more than one) reference row matches the requested key."""


class WindowError(NutriloopError):
    """Residual history is too short for the requested window."""


class TransportError(NutriloopError):
    """A backend call failed at the transport level; may be retried."""

    def __init__(self, message: str, retriable: bool = True):
        super().__init__(message)
        self.retriable = retriable


class FixtureMissError(NutriloopError):
    """A mock backend was asked for an input not present in its fixture."""


class IdempotencyError(NutriloopError):
    """A write with an already-used identifier was rejected."""


class NotFoundError(NutriloopError):
    """The requested record does not exist."""


class StoreLockedError(NutriloopError):
    """A second writer tried to open a store root that is already owned."""


class UndefinedMetricError(NutriloopError):
    """A metric has no defined value for the given inputs (e.g. empty pair set)."""
