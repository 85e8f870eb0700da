"""Exception types shared across the package."""


class AnmError(Exception):
    """Base class for all package errors."""


class SignalFaultError(AnmError):
    """A stream carried a non-finite sample."""


class AliasingError(AnmError):
    """A generator frequency is at or above the Nyquist limit."""


class ConfigError(AnmError):
    """Invalid configuration value or topology."""


class CalibrationError(AnmError):
    """Secondary path identification failed or diverged."""


class ControllerFault(AnmError):
    """Adaptive controller tripped its divergence fail-safe."""


class SchemaError(ConfigError):
    """Scenario file failed schema validation.

    ``pointers`` carries one "/json/pointer: message" line per violation.
    """

    def __init__(self, message, pointers=()):
        self.pointers = list(pointers)
        if self.pointers:
            message += "\n" + "\n".join(f"  {p}" for p in self.pointers)
        super().__init__(message)
