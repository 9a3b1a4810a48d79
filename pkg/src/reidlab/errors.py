"""Exception hierarchy shared by every stage of the pipeline."""


class ReidLabError(Exception):
    """Base class for all errors raised by reidlab."""

    exit_code = 1


class ConfigurationError(ReidLabError, ValueError):
    exit_code = 2


class ParseError(ReidLabError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    exit_code = 5

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ShapeError(ReidLabError, ValueError):
    exit_code = 4


class SplitError(ReidLabError, ValueError):
    exit_code = 6

    def __init__(self, message, identities=()):
        self.identities = list(identities)
        super().__init__(message)


class FittingError(ReidLabError):
    exit_code = 7


class NumericalError(ReidLabError, ArithmeticError):
    exit_code = 8


class ProtocolError(ReidLabError):
    exit_code = 9


class TrainingError(ReidLabError):
    exit_code = 10


class UsageError(ReidLabError, RuntimeError):
    exit_code = 11


class ExtractionError(ReidLabError):
    exit_code = 12


class BenchmarkError(ReidLabError):
    exit_code = 13

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)


class ConsistencyError(ReidLabError):
    exit_code = 14


class MissingFileError(ReidLabError, FileNotFoundError):
    exit_code = 3
