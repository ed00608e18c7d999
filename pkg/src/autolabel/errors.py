"""Shared exception types."""

from __future__ import annotations


class AutolabelError(Exception):
    """Base class for all engine errors."""


class FormatError(AutolabelError):
    """Malformed content in an annotation or interchange file.

    Carries the 1-based line number when the error is tied to a line.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(AutolabelError):
    """A value violates a domain invariant."""


class BackendError(AutolabelError):
    """A detector or embedding backend failed to produce usable output."""


class ConfigError(AutolabelError):
    """Invalid or incomplete run configuration."""
