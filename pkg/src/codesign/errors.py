"""Typed errors shared across the engine.

Every error carries a stable ``code`` string; the HTTP layer maps codes to
status codes and the structured error body ``{code, message, details}``.
"""

from __future__ import annotations

from typing import Any


class CodesignError(Exception):
    """Base class for engine errors."""

    code = "INTERNAL"
    http_status = 500

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.message = message
        self.details = details

    def to_body(self) -> dict[str, Any]:
        return {"code": self.code, "message": self.message, "details": self.details}


class ValidationFailed(CodesignError):
    code = "VALIDATION_FAILED"
    http_status = 422


class MissingDetail(ValidationFailed):
    code = "MISSING_DETAIL"


class InvalidRegion(ValidationFailed):
    code = "INVALID_REGION"


class IncompleteSelection(ValidationFailed):
    code = "INCOMPLETE_SELECTION"


class EmptyBatch(ValidationFailed):
    code = "EMPTY_BATCH"


class UnknownProject(CodesignError):
    code = "UNKNOWN_PROJECT"
    http_status = 404


class UnknownSession(CodesignError):
    code = "UNKNOWN_SESSION"
    http_status = 404


class UnknownItem(CodesignError):
    code = "UNKNOWN_ITEM"
    http_status = 404


class UnknownAttribute(CodesignError):
    code = "UNKNOWN_ATTRIBUTE"
    http_status = 404


class UnknownNode(CodesignError):
    code = "UNKNOWN_NODE"
    http_status = 404


class AlreadyDeleted(CodesignError):
    code = "ALREADY_DELETED"
    http_status = 409


class AlreadyPruned(CodesignError):
    code = "ALREADY_PRUNED"
    http_status = 409


class NotPruned(CodesignError):
    code = "NOT_PRUNED"
    http_status = 409


class SessionClosed(CodesignError):
    code = "SESSION_CLOSED"
    http_status = 409


class StaleSnapshot(CodesignError):
    code = "STALE_SNAPSHOT"
    http_status = 409


class NoCandidates(CodesignError):
    code = "NO_CANDIDATES"
    http_status = 409


class BackendUnavailable(CodesignError):
    code = "BACKEND_UNAVAILABLE"
    http_status = 503


class StorageFull(CodesignError):
    code = "STORAGE_FULL"
    http_status = 507


class CorruptLog(CodesignError):
    code = "CORRUPT_LOG"
    http_status = 500

    def __init__(self, message: str, seq: int | None = None, **details: Any) -> None:
        super().__init__(message, seq=seq, **details)
        self.seq = seq
