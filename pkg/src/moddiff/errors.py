"""Exception types shared across the package.

CLI exit-code contract: InvalidInputError / InvalidConfigError map to exit
code 2, NumericFailureError to exit 3.
"""


class ModdiffError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ModdiffError, ValueError):
    """Malformed arguments: dimension mismatch, out-of-range index, empty input."""


class InvalidConfigError(ModdiffError, ValueError):
    """A configuration value violates its documented constraints."""


class NumericFailureError(ModdiffError, ArithmeticError):
    """Non-finite values appeared where finite numbers are required."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class FrozenModuleError(ModdiffError, RuntimeError):
    """A mutating operation was attempted on a frozen module."""


class KindMismatchError(ModdiffError, TypeError):
    """A guidance module of the wrong kind was passed to an operation."""


class CompositionError(ModdiffError, ValueError):
    """Checkpoints cannot be composed (state/action dimensions differ)."""


class CheckpointFormatError(ModdiffError, ValueError):
    """A checkpoint or dataset file is corrupt, truncated, or has a bad checksum."""


class CheckpointVersionError(CheckpointFormatError):
    """A checkpoint or dataset file has an unsupported format version."""


class MissingAnchorError(ModdiffError, KeyError):
    """Return normalization was requested for an unregistered environment."""
