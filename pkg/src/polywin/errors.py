"""Exception hierarchy shared by every polywin module.

Each class carries the process exit code the CLI maps it to
(0 success, 1 usage, 2 data/format, 3 numeric failure).
"""


class PolywinError(Exception):
    exit_code = 1


class ConfigError(PolywinError, ValueError):
    """Invalid configuration value or combination."""

    exit_code = 1


class InputError(PolywinError, ValueError):
    """Arguments violate an operation's precondition."""

    exit_code = 1


class FormatError(PolywinError):
    """On-disk file does not follow the documented layout."""

    exit_code = 2


class DataError(PolywinError):
    """File parses but its content is invalid (non-finite samples, bad labels)."""

    exit_code = 2


class StateError(PolywinError, RuntimeError):
    exit_code = 1


class GuardError(PolywinError):
    """Instance too large for a brute-force path."""

    exit_code = 1


class MetricError(PolywinError):
    exit_code = 3


class NumericError(PolywinError, ArithmeticError):
    """Non-finite loss or gradient during optimization."""

    exit_code = 3


class FeasibilityWarning(UserWarning):
    """Requested window placement cannot honor the overlap cap."""


class DegenerateInputWarning(UserWarning):
    """Zero-norm rows met during normalization."""
