class ConfigError(ValueError):
    """Invalid, unknown or missing configuration."""


class DataError(ValueError):
    """Input data is malformed or inconsistent with the request."""


class SpikeFormatError(DataError):
    """A MEASPIKES file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(ArithmeticError):
    """A numerical step failed (non-finite values, singular precision)."""
