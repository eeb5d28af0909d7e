"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` so the command line layer can map
failures onto process exit statuses without inspecting types one by one:
1 for usage/configuration mistakes, 2 for data or numeric problems, 3 for
failed verification checks.
"""

from __future__ import annotations


class VolsegError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class UsageError(VolsegError):
    """An API or CLI precondition was violated by the caller."""

    exit_code = 1


class ConfigurationError(VolsegError):
    """A configuration document is malformed or internally inconsistent."""

    exit_code = 1


class DimensionError(VolsegError):
    """Array shapes or extents are incompatible with the requested operation."""

    exit_code = 2


class NiftiFormatError(VolsegError):
    """A file does not parse as single-file NIfTI-1 or uses unsupported features."""

    exit_code = 2


class NumericsError(VolsegError):
    """A numeric kernel produced NaN or Inf; surfaced at the operation that made it."""

    exit_code = 2


class CheckFailureError(VolsegError):
    """A requested verification (gradient check, shape check) did not pass."""

    exit_code = 3
