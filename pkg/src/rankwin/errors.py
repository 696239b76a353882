"""Exception types shared across the package."""


class DomainError(ValueError):
    """Inputs outside an operation's mathematical domain."""


class ConfigError(ValueError):
    """Invalid configuration: partition sizing, bad dimensions, bad flags."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class DataError(ValueError):
    """Malformed or non-finite data."""


class NumericalError(ArithmeticError):
    """Non-finite values appeared in the middle of a computation."""


class SelectionError(RuntimeError):
    """No usable reference pair exists for a window."""


class DigestMismatchError(DataError):
    """Stored artifact was produced by a different model or dataset."""
