class MemadmError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(MemadmError, ValueError):
    """Invalid configuration; ``path`` names the offending field when known."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class SignalError(MemadmError, ValueError):
    """A stimulus could not be read, synthesized or conditioned."""


class DeviceError(MemadmError, ValueError):
    """Invalid operation on a memristor model."""
