"""Exception hierarchy shared by every coopt module."""


class CoOptError(Exception):
    """Base class for all errors raised by coopt."""


class PartitionError(CoOptError, ValueError):
    pass


class MergeError(CoOptError, ValueError):
    """Raised when target sets cannot be merged; ``shard_id`` names the culprit."""

    def __init__(self, message, shard_id=None):
        super().__init__(message)
        self.shard_id = shard_id


class ExtractionError(CoOptError, ValueError):
    pass


class MissingLabelsError(CoOptError, ValueError):
    pass


class DimensionError(CoOptError, ValueError):
    pass


class ProjectionError(DimensionError):
    pass


class InsufficientDataError(CoOptError, ValueError):
    pass


class NumericError(CoOptError, ArithmeticError):
    pass


class SelectionError(CoOptError, ValueError):
    pass


class AlignmentError(CoOptError, ValueError):
    pass


class IllPosedError(AlignmentError):
    pass


class NotReadyError(CoOptError, RuntimeError):
    pass


class ProtocolError(CoOptError, RuntimeError):
    """A protocol round failed. ``phase`` tells which step aborted it."""

    def __init__(self, message, phase):
        super().__init__(f"[{phase}] {message}")
        self.phase = phase


class UploadRejected(ProtocolError):
    def __init__(self, message):
        super().__init__(message, phase="uploading")


class FormatError(CoOptError, ValueError):
    pass


class ConfigError(CoOptError, ValueError):
    pass


class InvalidEvalError(CoOptError, ValueError):
    pass


class DegenerateRankingError(CoOptError, ValueError):
    pass
