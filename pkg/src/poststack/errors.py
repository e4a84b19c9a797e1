"""Exception types shared across the stack.

Every error that surfaces through the API maps to an HTTP status via
``status`` so handlers can build uniform error bodies.
"""


class PostError(Exception):
    """Base class; ``code`` is the stable machine-readable identifier."""

    code = "InternalError"
    status = 500

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


class EmptyMessage(PostError):
    code = "EmptyMessage"
    status = 400


class StorageFailure(PostError):
    code = "StorageFailure"
    status = 500


class RuleSyntaxError(PostError):
    code = "SyntaxError"
    status = 400

    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"{message} (line {line}, col {column})")
        self.line = line
        self.column = column


class UndeclaredString(PostError):
    code = "UndeclaredString"
    status = 400


class DuplicateRuleName(PostError):
    code = "DuplicateRuleName"
    status = 400


class EmptyDataset(PostError):
    code = "EmptyDataset"
    status = 400


class InvalidParams(PostError):
    code = "InvalidParams"
    status = 400


class SchemaMismatch(PostError):
    code = "SchemaMismatch"
    status = 400


class CorruptModel(PostError):
    code = "CorruptModel"
    status = 400


class HashMismatch(PostError):
    code = "HashMismatch"
    status = 400


class UnsupportedImage(PostError):
    code = "UnsupportedImage"
    status = 400


class QrDecodeError(PostError):
    code = "QrDecodeError"
    status = 400


class FormatInfoInvalid(QrDecodeError):
    code = "FormatInfoInvalid"


class RsSyndromeNonZero(QrDecodeError):
    code = "RsSyndromeNonZero"


class UnsupportedMode(QrDecodeError):
    code = "UnsupportedMode"


class UnsupportedVersion(QrDecodeError):
    code = "UnsupportedVersion"


class DuplicateFinalRecord(PostError):
    code = "DuplicateFinalRecord"
    status = 409


class UnknownEmail(PostError):
    code = "UnknownEmail"
    status = 404


class AlreadyFinal(PostError):
    code = "AlreadyFinal"
    status = 409


class QuerySyntaxError(PostError):
    code = "QuerySyntaxError"
    status = 400

    def __init__(self, message: str, position: int = 0):
        super().__init__(f"{message} (at {position})")
        self.position = position


class InvalidCount(PostError):
    code = "InvalidCount"
    status = 400


class MalformedEncodedWord(PostError):
    code = "MalformedEncodedWord"
    status = 400
