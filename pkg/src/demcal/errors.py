"""Exception types shared across the package.

Each CLI-facing error family carries the process exit code used by the
command-line driver: 2 for configuration problems, 3 for data-integrity
problems (mismatched or malformed files), 4 for numerical failures.
"""

from __future__ import annotations


class DemcalError(Exception):
    """Base class for all package-specific errors."""

    exit_code = 1


class ConfigError(DemcalError):
    """Invalid, incomplete, or contradictory run configuration."""

    exit_code = 2


class DataError(DemcalError):
    """Malformed or mutually inconsistent data files / structures."""

    exit_code = 3


class NumericalError(DemcalError):
    """Non-finite or otherwise unusable numerical state."""

    exit_code = 4
