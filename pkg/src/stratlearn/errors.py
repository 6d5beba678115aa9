"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or argument values."""


class ShapeError(ValueError):
    """Array shapes that do not fit together."""


class NumericError(ArithmeticError):
    """Non-finite values showed up during a computation."""


class ParseError(ValueError):
    """Malformed input file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
