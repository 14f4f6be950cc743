"""
Data models for rqrag
"""

from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from .exceptions import ConfigurationError


class RefinementAction(Enum):
    """Action chosen by the generator at one decoding turn"""
    REWRITE = "rewrite"
    DECOMPOSE = "decompose"
    DISAMBIGUATE = "disambiguate"
    ANSWER = "answer"


class FinishReason(Enum):
    STOP_TOKEN = "stop"
    MAX_TOKENS = "length"
    END_OF_SEQUENCE = "eos"


class RetrievalSource(Enum):
    BM25_CORPUS = "bm25"
    EMBEDDING_CANDIDATES = "embedding"
    WEB_SEARCH = "web"


class Strategy(Enum):
    PPL = "ppl"
    CONFIDENCE = "confidence"
    ENSEMBLE = "ensemble"


class Category(Enum):
    MULTI_TURN = "multi_turn"
    MULTI_HOP = "multi_hop"
    AMBIGUOUS = "ambiguous"


class AnswerProvenance(Enum):
    REGENERATED = "regenerated"
    ORIGINAL_RETAINED = "original_retained"
    # pass-through instruction data, never annotated
    VERBATIM = "verbatim"


@dataclass
class Document:
    """Retrieved evidence"""
    title: str
    snippet: str
    locator: str = ""
    rank: int = 1
    score: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Document":
        return cls(
            title=data.get("title", ""),
            snippet=data.get("snippet", data.get("body", "")),
            locator=data.get("locator", data.get("url", data.get("id", ""))) or "",
            rank=int(data.get("rank", 1)),
            score=float(data.get("score", 0.0)),
        )


@dataclass
class SearchStep:
    """One refinement turn: action, refined query and its evidence"""
    turn: int
    action: RefinementAction
    refined_query: str
    documents: List[Document] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "turn": self.turn,
            "action": self.action.value,
            "query": self.refined_query,
            "documents": [d.to_dict() for d in self.documents],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SearchStep":
        return cls(
            turn=int(data["turn"]),
            action=RefinementAction(data["action"]),
            refined_query=data["query"],
            documents=[Document.from_dict(d) for d in data.get("documents", [])],
        )


@dataclass
class Trajectory:
    """
    One root-to-leaf decoding path.

    generated_tokens holds (token, log_prob) pairs for everything the model
    produced: each refinement continuation followed by the answer
    continuation. answer_start indexes the first answer token.
    evidence_log_probs is only filled when evidence blocks were scored.
    """
    input: str
    steps: List[SearchStep] = field(default_factory=list)
    final_answer: str = ""
    generated_tokens: List[Tuple[str, float]] = field(default_factory=list)
    answer_start: int = 0
    evidence_log_probs: List[float] = field(default_factory=list)

    @property
    def log_probs(self) -> List[float]:
        return [lp for _, lp in self.generated_tokens]

    @property
    def answer_log_probs(self) -> List[float]:
        return self.log_probs[self.answer_start:]

    @property
    def depth(self) -> int:
        return len(self.steps)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input": self.input,
            "steps": [s.to_dict() for s in self.steps],
            "final_answer": self.final_answer,
            "generated_tokens": [[t, lp] for t, lp in self.generated_tokens],
            "answer_start": self.answer_start,
            "evidence_log_probs": list(self.evidence_log_probs),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Trajectory":
        return cls(
            input=data["input"],
            steps=[SearchStep.from_dict(s) for s in data.get("steps", [])],
            final_answer=data.get("final_answer", ""),
            generated_tokens=[(t, float(lp)) for t, lp in data.get("generated_tokens", [])],
            answer_start=int(data.get("answer_start", 0)),
            evidence_log_probs=[float(x) for x in data.get("evidence_log_probs", [])],
        )


@dataclass
class Completion:
    """Generator output for one continuation"""
    text: str
    tokens: List[str] = field(default_factory=list)
    log_probs: List[float] = field(default_factory=list)
    finish_reason: FinishReason = FinishReason.END_OF_SEQUENCE


@dataclass
class DecodeParams:
    max_tokens: int = 256
    temperature: float = 0.0
    stop_sequences: List[str] = field(default_factory=list)
    want_log_probs: bool = True

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ConfigurationError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ConfigurationError("temperature must be >= 0")


@dataclass
class SearchConfig:
    """Tree-search settings: exploration width/depth, evidence per step, source, strategy"""
    width: int = 2
    max_depth: int = 2
    top_k: int = 3
    source: RetrievalSource = RetrievalSource.WEB_SEARCH
    strategy: Strategy = Strategy.ENSEMBLE
    decode: DecodeParams = field(default_factory=lambda: DecodeParams(temperature=0.7))
    concurrency: int = 4
    retries: int = 0
    call_budget: Optional[int] = None

    def __post_init__(self):
        if self.width < 1:
            raise ConfigurationError("width must be >= 1")
        if self.max_depth < 0:
            raise ConfigurationError("max_depth must be >= 0")
        if self.top_k < 1:
            raise ConfigurationError("top_k must be >= 1")
        if self.concurrency < 1:
            raise ConfigurationError("concurrency must be >= 1")
        if self.retries < 0:
            raise ConfigurationError("retries must be >= 0")
        if self.call_budget is not None and self.call_budget < 1:
            raise ConfigurationError("call_budget must be >= 1")

    def call_bound(self) -> int:
        """Generator calls needed for a full tree plus one forced answer per deepest leaf"""
        w, d = self.width, self.max_depth
        internal = d + 1 if w == 1 else (w ** (d + 1) - 1) // (w - 1)
        return internal + w ** d


@dataclass
class TreeNode:
    partial: Trajectory
    depth: int = 0
    children: List["TreeNode"] = field(default_factory=list)
    terminal: bool = False
    failed: bool = False


@dataclass
class ScoredTrajectory:
    trajectory: Trajectory
    ppl: float
    confidence: float
    answer_norm: str

    @property
    def answer(self) -> str:
        return self.trajectory.final_answer


@dataclass
class RawInstance:
    """Task-pool record before augmentation"""
    id: str
    x_origin: str
    y_origin: str
    source: str = ""
    category: Optional[Category] = None
    candidates: Optional[List[Document]] = None
    support_ids: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "id": self.id,
            "source": self.source,
            "input": self.x_origin,
            "output": self.y_origin,
        }
        if self.category is not None:
            data["category"] = self.category.value
        if self.candidates is not None:
            data["candidates"] = [d.to_dict() for d in self.candidates]
        if self.support_ids:
            data["support_ids"] = list(self.support_ids)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RawInstance":
        candidates = data.get("candidates")
        return cls(
            id=str(data["id"]),
            x_origin=data["input"],
            y_origin=data.get("output", ""),
            source=data.get("source", ""),
            category=Category(data["category"]) if data.get("category") else None,
            candidates=[Document.from_dict(c) for c in candidates] if candidates is not None else None,
            support_ids=[str(s) for s in data.get("support_ids", [])],
        )


@dataclass
class AugmentedInstance:
    """One search-augmented training record"""
    raw: RawInstance
    steps: List[SearchStep] = field(default_factory=list)
    y_new: str = ""
    answer_provenance: AnswerProvenance = AnswerProvenance.REGENERATED
    dropped_reason: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "raw": self.raw.to_dict(),
            "steps": [s.to_dict() for s in self.steps],
            "y_new": self.y_new,
            "answer_provenance": self.answer_provenance.value,
            "dropped_reason": self.dropped_reason,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AugmentedInstance":
        return cls(
            raw=RawInstance.from_dict(data["raw"]),
            steps=[SearchStep.from_dict(s) for s in data.get("steps", [])],
            y_new=data.get("y_new", ""),
            answer_provenance=AnswerProvenance(data.get("answer_provenance", "regenerated")),
            dropped_reason=data.get("dropped_reason"),
        )


@dataclass
class BenchmarkItem:
    id: str
    question: str
    gold: List[str]
    choices: Optional[List[str]] = None
    candidates: Optional[List[Document]] = None

    def __post_init__(self):
        if not self.gold:
            raise ValueError(f"benchmark item {self.id} has no gold answers")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BenchmarkItem":
        gold = data["gold"]
        candidates = data.get("candidates")
        return cls(
            id=str(data["id"]),
            question=data["question"],
            gold=[gold] if isinstance(gold, str) else list(gold),
            choices=data.get("choices"),
            candidates=[Document.from_dict(c) for c in candidates] if candidates is not None else None,
        )


@dataclass
class ItemResult:
    id: str
    chosen: str = ""
    answers: Dict[str, str] = field(default_factory=dict)
    correct: Dict[str, float] = field(default_factory=dict)
    upper_bound: float = 0.0
    trajectories: int = 0
    error: Optional[str] = None


@dataclass
class Report:
    per_item: List[ItemResult]
    strategy_scores: Dict[str, float]
    upper_bound_score: float
    config_hash: str
    task: str = ""
    metric: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task": self.task,
            "metric": self.metric,
            "config_hash": self.config_hash,
            "strategy_scores": dict(self.strategy_scores),
            "upper_bound_score": self.upper_bound_score,
            "per_item": [asdict(r) for r in self.per_item],
        }
