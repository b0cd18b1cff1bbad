"""Exception types raised across the package."""


class HistatError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(HistatError, ValueError):
    """Operand dimensions do not line up."""


class DegenerateRowError(HistatError, ValueError):
    """A Lipschitz layer weight row has zero L1 norm and cannot be rescaled."""


class NumericError(HistatError, ArithmeticError):
    """A NaN or infinity showed up where finite values are required."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class FormatError(HistatError, ValueError):
    """A checkpoint or dataset file is malformed.

    ``kind`` is one of ``"bad magic"``, ``"version mismatch"``, ``"truncated"``,
    ``"length mismatch"`` or ``"label mismatch"``.
    """

    def __init__(self, kind, detail=""):
        msg = kind if not detail else f"{kind}: {detail}"
        super().__init__(msg)
        self.kind = kind


class ConfigError(HistatError, ValueError):
    """Invalid or unknown configuration values."""
