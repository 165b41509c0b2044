"""Exception types shared across the package."""


class PianobotError(Exception):
    """Base class for package errors."""


class SongParseError(PianobotError, ValueError):
    """Malformed song input.

    ``offset`` is a byte offset for binary (MIDI) input, ``line`` a
    1-based line number for text input; whichever applies is set.
    """

    def __init__(self, message, offset=None, line=None):
        detail = message
        if offset is not None:
            detail = f"{message} (byte offset {offset})"
        if line is not None:
            detail = f"{message} (line {line})"
        super().__init__(detail)
        self.offset = offset
        self.line = line


class ConfigError(PianobotError):
    """Invalid or missing configuration."""


class IntegrationFault(PianobotError):
    """Plant state became non-finite during integration."""


class BridgeProtocolError(PianobotError):
    """Malformed message or protocol violation on the plant bridge."""


class BridgeTimeoutError(PianobotError):
    """Plant bridge missed too many per-step deadlines."""


class CheckpointError(PianobotError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


class TrainingDiverged(PianobotError):
    """Loss became non-finite during training."""
