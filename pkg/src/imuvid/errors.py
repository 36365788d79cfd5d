"""Exception hierarchy shared across the package.

CLI exit-code mapping: ConfigError/InputError/UsageError -> 2,
verification failures -> 1.
"""


class ImuvidError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(ImuvidError):
    """Tensor shapes incompatible for an operation; message names both shapes."""


class ConfigError(ImuvidError):
    """Invalid configuration value (bad kernel size, indivisible dims, ...)."""


class InputError(ImuvidError):
    """Malformed or insufficient input data."""


class UsageError(ImuvidError):
    """API called in an unsupported way (non-scalar backward, count mismatch, ...)."""


class FormatError(ImuvidError):
    """Malformed persistent file. Carries the byte offset of the failure."""

    def __init__(self, message: str, *, path=None, offset=None):
        self.path = path
        self.offset = offset
        loc = ""
        if path is not None:
            loc += f" [{path}]"
        if offset is not None:
            loc += f" at byte offset {offset}"
        super().__init__(message + loc)


class NonFiniteGradientError(ImuvidError):
    """Optimizer step aborted because a gradient contained NaN/Inf."""
