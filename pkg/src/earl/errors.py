"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage/config -> 1,
data -> 2, numerical failure -> 3.
"""


class EarlError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(EarlError):
    """Invalid or conflicting configuration (bad flag combination, bad value)."""


class DataError(EarlError):
    """Malformed or missing input data (parse failures, empty files, bad caches)."""


class NumericalError(EarlError):
    """Non-finite value produced where finite math is required."""


class ShapeError(EarlError):
    """Operands passed to a tensor primitive with incompatible shapes."""
