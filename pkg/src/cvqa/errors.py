"""Exception types shared across the package."""


class CvqaError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(CvqaError, ValueError):
    pass


class NonFinite(CvqaError, ValueError):
    pass


class ZeroVector(CvqaError, ValueError):
    pass


class DetachedNode(CvqaError, ValueError):
    pass


class SimplexViolation(CvqaError, ValueError):
    pass


class EmptyPool(CvqaError, ValueError):
    pass


class KTooLarge(CvqaError, ValueError):
    pass


class IndexOutOfRange(CvqaError, IndexError):
    pass


class LambdaOutOfRange(CvqaError, ValueError):
    pass


class TokenOutOfRange(CvqaError, ValueError):
    pass


class ConfigInvalid(CvqaError, ValueError):
    """Raised for configuration problems; ``field`` names the offending key."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ParseError(CvqaError, ValueError):
    """Feature-file parse failure; ``record`` is the 1-based line number."""

    def __init__(self, message: str, record: int | None = None):
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record


class ShapeMismatch(CvqaError, ValueError):
    pass


class EmptyTestSet(CvqaError, ValueError):
    pass


class IncompleteMatrix(CvqaError, ValueError):
    pass


class SingleTask(CvqaError, ValueError):
    pass


class TrainingAborted(CvqaError, RuntimeError):
    """A numerical failure during training; ``step`` is the global step index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step
