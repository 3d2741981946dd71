"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to (2 config, 3 data, 4 numerical).
"""


class MapDenoiseError(Exception):
    exit_code = 1


class ConfigError(MapDenoiseError):
    exit_code = 2


class DataError(MapDenoiseError):
    exit_code = 3


class NumericalError(MapDenoiseError):
    exit_code = 4


class DegenerateSignal(DataError):
    """A signal is constant where a non-constant one is required."""


class InvalidParams(ConfigError, ValueError):
    pass


class InsufficientData(DataError):
    pass


class EmptyDataset(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AlignmentError(DataError):
    pass


class CheckpointError(DataError):
    pass


class NoPreUpstrokeRegion(DataError):
    pass


class SignalTooShort(DataError):
    pass


class InvalidCutoff(InvalidParams):
    pass


class ShapeError(NumericalError, ValueError):
    pass


class NonFiniteError(NumericalError, FloatingPointError):
    pass


class GraphConsumed(NumericalError, RuntimeError):
    pass


class ProvenanceMismatch(DataError):
    """Artifacts stamped with different config hashes were combined."""
