"""Exception types shared across the package.

The CLI maps these onto exit codes: PreconditionError -> 2, I/O and
format problems -> 3.  Library callers get ordinary exceptions.
"""

from __future__ import annotations


class RelightKitError(Exception):
    """Base class for all package-specific errors."""


class PreconditionError(RelightKitError):
    """An operation was called with inputs that violate its contract."""


class FileFormatError(RelightKitError):
    """A file exists but its content does not match the expected format.

    Carries the offending path and, when known, the 1-based line number
    so parsers can point at the exact spot.
    """

    def __init__(self, path: str, message: str, line: int | None = None,
                 column: int | None = None):
        self.path = str(path)
        self.line = line
        self.column = column
        where = self.path
        if line is not None:
            where += f":{line}"
            if column is not None:
                where += f":{column}"
        super().__init__(f"{where}: {message}")


class SceneError(RelightKitError):
    """A scene description or edit script is inconsistent."""
