"""Exception types shared across the package."""


class RollvidError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RollvidError):
    """A config value or key is invalid; the message names the offender."""


class DimensionError(RollvidError):
    """Array shapes do not satisfy an operation's contract."""


class TimestepError(RollvidError):
    """A timestep index is outside the schedule's valid range."""


class QueueInvariantError(RollvidError):
    """The noise-level ladder or frame indexing of the queue is broken."""


class StateError(RollvidError):
    """An operation was called on an object in the wrong lifecycle state."""


class DegenerateInputError(RollvidError):
    """Input carries no usable signal (e.g. all values identical)."""


class InsufficientDataError(RollvidError):
    """Too few frames (or usable frames) to evaluate a metric."""


class DumpFormatError(RollvidError):
    """A video dump file is malformed; the message names the path."""


class NumericalDivergenceError(RollvidError):
    """Non-finite values appeared mid-run; carries the offending step index."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
