"""Exception types shared across the package."""


class RfumlError(Exception):
    """Base class for all package errors."""


class InvalidInputError(RfumlError, ValueError):
    pass


class DegenerateInputError(RfumlError, ValueError):
    """Input is well-formed but carries no usable signal (zero vectors, constant data)."""


class NumericFailure(RfumlError, FloatingPointError):
    pass


class DataError(RfumlError, ValueError):
    pass


class ConfigError(RfumlError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""
