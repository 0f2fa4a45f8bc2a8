"""Exception types raised across the package."""


class SsmRetError(Exception):
    """Base class for every error raised by ssmret."""


class DimensionError(SsmRetError, ValueError):
    pass


class ContractError(SsmRetError, ValueError):
    """A precondition of an operation was violated."""


class VocabularyError(SsmRetError, ValueError):
    pass


class LengthError(SsmRetError, ValueError):
    """Sequence longer than the model's configured maximum."""


class IngestionError(SsmRetError, ValueError):
    pass


class EvaluationError(SsmRetError, ValueError):
    pass


class TrainingDivergedError(SsmRetError, RuntimeError):
    pass


class FormatError(SsmRetError):
    """Base class for binary file load failures."""


class MagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class DimMismatchError(FormatError):
    pass
