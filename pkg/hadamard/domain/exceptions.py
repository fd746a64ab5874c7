class DomainException(Exception):
    def __init__(self, message: str, code: str = "DOMAIN_ERROR"):
        self.message = message
        self.code = code
        super().__init__(self.message)


class ShapeMismatchError(DomainException):
    def __init__(self, message: str = "Tensor shapes are incompatible"):
        super().__init__(message, code="SHAPE_MISMATCH")


class NonFiniteValueError(DomainException):
    def __init__(self, message: str = "Tensor contains NaN or Inf"):
        super().__init__(message, code="NON_FINITE")


class InvalidExtentError(DomainException):
    def __init__(self, message: str = "Output extent is not positive"):
        super().__init__(message, code="INVALID_EXTENT")


class TokenOutOfRangeError(DomainException):
    def __init__(self, message: str = "Token id outside the vocabulary"):
        super().__init__(message, code="TOKEN_OUT_OF_RANGE")


class EmptyQuestionError(DomainException):
    def __init__(self, message: str = "Question has no tokens"):
        super().__init__(message, code="EMPTY_QUESTION")


class QuestionTooLongError(DomainException):
    def __init__(self, message: str = "Question exceeds the maximum token count"):
        super().__init__(message, code="QUESTION_TOO_LONG")


class TraceIncompleteError(DomainException):
    def __init__(self, message: str = "Forward trace is missing named nodes"):
        super().__init__(message, code="TRACE_INCOMPLETE")


class UndefinedStandardScoreError(DomainException):
    def __init__(self, message: str = "undefined standard score"):
        super().__init__(message, code="UNDEFINED_STANDARD_SCORE")


class PlacementError(DomainException):
    def __init__(self, message: str = "Could not place scene objects"):
        super().__init__(message, code="PLACEMENT_FAILED")


class EmptyDatasetError(DomainException):
    def __init__(self, message: str = "Dataset has no samples"):
        super().__init__(message, code="EMPTY_DATASET")


class NonFiniteLossError(DomainException):
    def __init__(self, message: str = "Training loss is not finite"):
        super().__init__(message, code="NON_FINITE_LOSS")


class UnknownTokenError(DomainException):
    def __init__(self, token: str):
        self.token = token
        super().__init__(f"Unknown token: {token!r}", code="UNKNOWN_TOKEN")


class DatasetFormatError(DomainException):
    def __init__(self, message: str = "Malformed dataset file"):
        super().__init__(message, code="DATASET_FORMAT")


class ImageFormatError(DomainException):
    def __init__(self, message: str = "Malformed image file"):
        super().__init__(message, code="IMAGE_FORMAT")


class CheckpointError(DomainException):
    pass


class BadMagicError(CheckpointError):
    def __init__(self, message: str = "bad magic"):
        super().__init__(message, code="BAD_MAGIC")


class VersionMismatchError(CheckpointError):
    def __init__(self, message: str = "checkpoint version mismatch"):
        super().__init__(message, code="VERSION_MISMATCH")


class TruncatedCheckpointError(CheckpointError):
    def __init__(self, message: str = "checkpoint is truncated"):
        super().__init__(message, code="TRUNCATED")


class IncompleteCheckpointError(CheckpointError):
    def __init__(self, message: str = "incomplete checkpoint"):
        super().__init__(message, code="INCOMPLETE_CHECKPOINT")
