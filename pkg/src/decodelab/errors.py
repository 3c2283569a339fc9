"""Exception hierarchy shared across the package."""


class DecodeLabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DecodeLabError):
    """Invalid parameter or configuration value (bad order, k, beam size, ...)."""


class InputError(DecodeLabError):
    """Invalid runtime input, e.g. a token id outside the vocabulary."""


class ParseError(DecodeLabError):
    """Malformed input file. Carries a line number when available."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(DecodeLabError):
    """Well-formed input that violates a data contract (duplicate ids, ...)."""


class UndefinedCorrelationError(DecodeLabError):
    """Pearson correlation requested for a zero-variance input."""
