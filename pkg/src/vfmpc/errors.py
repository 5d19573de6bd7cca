"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for all engine errors."""


class InvalidInputError(EngineError):
    """An operation received malformed or out-of-contract data."""


class ConfigurationError(EngineError):
    """A configuration value or selector is unusable."""


class GenerationError(EngineError):
    """Task or data generation cannot make progress."""


class TrainingError(EngineError):
    """Classifier training cannot proceed (e.g. single-class data)."""


class PlannerError(EngineError):
    """Trajectory optimization cannot produce a result."""


class ProtocolError(EngineError):
    """Wire-protocol violation: bad framing, shapes, or non-finite payloads."""


class RemoteModelError(EngineError):
    """A remote model reported an ERROR message or its transport failed."""

    def __init__(self, message: str, code: int | None = None):
        super().__init__(message)
        self.code = code
