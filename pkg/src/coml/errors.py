"""Exception taxonomy shared across the package."""


class CoMLError(Exception):
    """Base class for all errors raised by this package."""

    code = "ERROR"


class MalformedImage(CoMLError):
    code = "MALFORMED_IMAGE"


class MalformedOp(CoMLError):
    code = "MALFORMED_OP"


class ValidationError(CoMLError):
    code = "VALIDATION"


class GapError(CoMLError):
    """Sequenced op arrived out of order (seq != applied_seq + 1)."""

    code = "GAP"


class SeqTooHigh(CoMLError):
    code = "SEQ_TOO_HIGH"


class UnknownProject(CoMLError):
    code = "UNKNOWN_PROJECT"


class AuthFailure(CoMLError):
    code = "AUTH_FAILURE"


class MissingBlob(CoMLError):
    code = "MISSING_BLOB"


class UnknownDigest(CoMLError):
    code = "UNKNOWN_DIGEST"


class InsufficientData(CoMLError):
    """Fewer than two labels have live training samples."""

    code = "INSUFFICIENT_DATA"


class EmptyTestSet(CoMLError):
    code = "EMPTY_TEST_SET"


class NoLabels(CoMLError):
    code = "NO_LABELS"


class EmptyWindow(CoMLError):
    code = "EMPTY_WINDOW"


class ConnectivityError(CoMLError):
    code = "CONNECTIVITY"


class ScriptError(CoMLError):
    """Session script failed; carries the offending line number."""

    code = "SCRIPT"

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
