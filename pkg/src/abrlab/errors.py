"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so raising the right class
is part of the public contract: configuration problems exit 2, bad
input data exits 3, and internal invariant violations exit 4.
"""
from __future__ import annotations


class AbrLabError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(AbrLabError):
    """Invalid configuration: bad flag values, inconsistent settings."""

    exit_code = 2


class DataError(AbrLabError):
    """Invalid input data: malformed traces, manifests, or model files."""

    exit_code = 3


class InternalError(AbrLabError):
    """An internal invariant failed; indicates a bug, not a user mistake."""

    exit_code = 4
