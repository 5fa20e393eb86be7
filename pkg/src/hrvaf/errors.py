"""Exception hierarchy. CLI exit codes hang off these classes."""


class HrvafError(Exception):
    exit_code = 2


class UsageError(HrvafError):
    exit_code = 1


class ConfigError(UsageError):
    pass


class DataError(HrvafError):
    exit_code = 2


class ParseError(DataError):
    pass


class HeaderParseError(ParseError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class AnnotationParseError(ParseError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} at byte offset {offset}")


class InsufficientDataError(DataError):
    pass


class UndefinedIndexError(DataError):
    pass


class SchemaError(DataError):
    pass


class FingerprintMismatchError(DataError):
    pass


class ConditioningError(HrvafError):
    exit_code = 3
