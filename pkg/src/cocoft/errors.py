"""Exception hierarchy. Each class carries the CLI exit code for its error class."""


class CoCoFtError(Exception):
    exit_code = 2


class UsageError(CoCoFtError):
    exit_code = 1


class DataError(CoCoFtError):
    """Unreadable, malformed, or inconsistent input data."""

    exit_code = 2


class ParseError(DataError):
    """Malformed input text. ``offset`` is a byte offset, or line/column for prototxt."""

    def __init__(self, message, offset=None, line=None, column=None):
        self.offset = offset
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        elif offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class SchemaError(DataError):
    pass


class IntegrityError(DataError):
    def __init__(self, message, ids=()):
        self.ids = list(ids)
        super().__init__(message)


class ConfigError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class EmptyResultError(CoCoFtError):
    """An operation would silently produce nothing: empty subset, no rewrite sites, too few images."""

    exit_code = 3
