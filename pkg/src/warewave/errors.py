"""Exception types raised across the package."""


class WarewaveError(Exception):
    """Base class for all package errors."""


class InvalidSpec(WarewaveError):
    pass


class PackingFailed(WarewaveError):
    pass


class PecMaterial(WarewaveError):
    pass


class DegenerateGeometry(WarewaveError):
    pass


class MissingFrequency(WarewaveError):
    pass


class DimensionMismatch(WarewaveError):
    pass


class ParseError(WarewaveError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownKey(ParseError):
    pass


class RangeError(ParseError):
    pass
