"""
Exception classes for rqrag
"""

from typing import Optional


class RQRAGError(Exception):
    """Base exception for rqrag"""
    pass


# --- protocol -------------------------------------------------------------

class ProtocolError(RQRAGError):
    """Serialized trajectory or continuation does not follow the grammar"""
    pass


class InvariantViolation(ProtocolError):
    pass


class UnknownToken(ProtocolError):
    def __init__(self, token: str):
        self.token = token
        super().__init__(f"Unknown control token: {token}")


class UnterminatedEvidence(ProtocolError):
    pass


class MissingAnswer(ProtocolError):
    pass


class MalformedContinuation(ProtocolError):
    pass


# --- backends -------------------------------------------------------------

class BackendError(RQRAGError):
    """Raised by a generator, retriever or annotator backend"""
    def __init__(self, message: str, backend: Optional[str] = None):
        self.backend = backend
        super().__init__(message)


class GeneratorError(BackendError):
    pass


class EndpointUnavailable(GeneratorError):
    pass


class MalformedResponse(GeneratorError):
    pass


class ScriptExhausted(GeneratorError):
    pass


class Unsupported(GeneratorError):
    pass


class RetrievalError(BackendError):
    pass


class UnknownDocument(RetrievalError):
    pass


class EmptyIndex(RetrievalError):
    pass


class DuplicateDocument(RetrievalError):
    pass


class EmbeddingUnavailable(RetrievalError):
    pass


class DimensionMismatch(RetrievalError):
    pass


class SearchUnavailable(RetrievalError):
    pass


class RateLimited(RetrievalError):
    """Backend asked us to slow down; retry_after is in seconds when known"""
    def __init__(self, message: str, backend: Optional[str] = None, retry_after: Optional[float] = None):
        self.retry_after = retry_after
        super().__init__(message, backend)


# --- selection ------------------------------------------------------------

class SelectionError(RQRAGError):
    pass


class NoScoredTokens(SelectionError):
    pass


class EmptyAnswerSpan(SelectionError):
    pass


class EmptyInput(SelectionError):
    pass


# --- engine ---------------------------------------------------------------

class EngineError(RQRAGError):
    pass


class NoTrajectory(EngineError):
    pass


class BudgetExhausted(EngineError):
    pass


# --- dataset --------------------------------------------------------------

class DatasetError(RQRAGError):
    """Per-instance failure during dataset construction"""

    reason = "DatasetError"


class UnknownSource(DatasetError):
    reason = "UnknownSource"


class AnnotatorRefusal(DatasetError):
    reason = "AnnotatorRefusal"


class FormatViolation(DatasetError):
    reason = "FormatViolation"


class AlignmentFailed(DatasetError):
    """Retrieved evidence misses a gold supporting document"""
    reason = "AlignmentFailed"


# --- evaluation -----------------------------------------------------------

class EvaluationError(RQRAGError):
    pass


class GoldNotInChoices(EvaluationError):
    pass


class RaggedRows(EvaluationError):
    pass


# --- app ------------------------------------------------------------------

class ConfigurationError(RQRAGError):
    """Exception raised for configuration issues"""
    pass


class UsageError(RQRAGError):
    pass
