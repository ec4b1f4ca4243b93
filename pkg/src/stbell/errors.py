"""Exception hierarchy shared by every layer of the package."""


class StBellError(Exception):
    """Base class for all package errors."""


class KernelError(StBellError):
    """A quantum-kernel invariant was violated (bad state, non-unitary, ...)."""


class ConfigError(StBellError, ValueError):
    """A user-supplied parameter is out of range or inconsistent."""


class InsufficientDataError(ConfigError):
    """A statistic needs a subensemble that has no rounds."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = tuple(missing)


class ProtocolError(StBellError):
    """A protocol step received input that breaks its contract."""
