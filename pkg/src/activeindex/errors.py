"""Exception hierarchy shared by every subpackage."""

from __future__ import annotations


class ActiveIndexError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(ActiveIndexError, ValueError):
    pass


class FormatError(ActiveIndexError):
    """A file or byte buffer does not follow the expected layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CorruptIndexError(ActiveIndexError):
    """Stored index content is inconsistent with its own geometry."""


class NotFoundError(ActiveIndexError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class NumericError(ActiveIndexError, ArithmeticError):
    pass
