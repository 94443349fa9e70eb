"""Exception types shared across the package."""


class MsfdaError(Exception):
    """Base class for all package errors."""


class ShapeError(MsfdaError, ValueError):
    pass


class ValidationError(MsfdaError, ValueError):
    pass


class SchemaError(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class ConfigError(ValidationError):
    """Raised with the dotted key path that failed validation."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class NoValidPrototype(MsfdaError):
    """No class has a usable prototype; the caller should bootstrap."""
