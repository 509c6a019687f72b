"""Exception hierarchy shared across the package."""


class McensError(Exception):
    """Base class for all package errors."""


class ArgumentError(McensError, ValueError):
    """An argument violates a documented precondition."""


class RankDeficiencyError(McensError, ArithmeticError):
    """Normal equations are singular and no ridge was supplied."""


class ConditioningError(McensError, ArithmeticError):
    """A matrix or kernel is too ill-conditioned for the requested operation."""


class AlignmentError(McensError, ValueError):
    """Two sample sets cannot be aligned by id."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class DegenerateSampleError(McensError, ValueError):
    """A sample cannot be processed (e.g. zero-norm row)."""

    def __init__(self, message, sample_id=None):
        super().__init__(message)
        self.sample_id = sample_id


class FitError(McensError, ValueError):
    """Statistics could not be fitted from the given data."""


class TrainingError(McensError, RuntimeError):
    """Training diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class FormatError(McensError, ValueError):
    """Base class for file parsing failures."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class NonFiniteError(FormatError):
    pass


class CsvParseError(FormatError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line
