"""Exception types shared across the package."""

from __future__ import annotations


class CollapseLabError(Exception):
    """Base class for errors raised by this package."""


class DomainError(CollapseLabError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class CapacityError(CollapseLabError):
    """An exact/enumerative operation would exceed its configured size limit."""


class ConfigError(CollapseLabError):
    """Invalid, unknown, or inconsistent configuration."""


class ProtocolError(CollapseLabError):
    """An environment or trainer was driven out of its legal call sequence."""


class LogParseError(CollapseLabError, ValueError):
    """A persisted artifact (rollout log, checkpoint) failed to parse.

    Carries the 1-based line number when the artifact is line-oriented.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
