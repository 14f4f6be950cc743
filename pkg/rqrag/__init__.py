"""
rqrag - query-refining retrieval-augmented generation

A generator interleaves control tokens with text to decide when to search,
how to refine the query (rewrite, decompose, disambiguate) and when to
answer. This package provides:
- the control-token protocol (render / parse / validate)
- tree decoding over refinement actions
- answer selection (perplexity, confidence, ensemble)
- construction of search-augmented training data
- benchmark and retrieval-source evaluation

Example:
    >>> from rqrag import RQRAG, load_config
    >>> async with RQRAG(load_config("fixtures/scripted.cfg")) as rag:
    >>>     result = await rag.infer("Who wrote Hamlet?")
    >>>     print(result.answer)
"""

from .config import EngineConfig, load_config
from .core import RQRAG, InferenceResult
from .engine import TreeSearchEngine
from .exceptions import ConfigurationError, ProtocolError, RQRAGError
from .models import (
    AugmentedInstance, BenchmarkItem, Category, Document, RawInstance, RefinementAction,
    Report, RetrievalSource, ScoredTrajectory, SearchConfig, SearchStep, Strategy, Trajectory,
)
from .protocol import DEFAULT_TOKENS, TokenTable, parse, render, validate
from .selection import SelectionConfig, select

__version__ = "0.1.0"
__all__ = [
    "RQRAG",
    "InferenceResult",
    "EngineConfig",
    "load_config",
    "TreeSearchEngine",
    "TokenTable",
    "DEFAULT_TOKENS",
    "render",
    "parse",
    "validate",
    "SelectionConfig",
    "select",
    "AugmentedInstance",
    "BenchmarkItem",
    "Category",
    "Document",
    "RawInstance",
    "RefinementAction",
    "Report",
    "RetrievalSource",
    "ScoredTrajectory",
    "SearchConfig",
    "SearchStep",
    "Strategy",
    "Trajectory",
    "RQRAGError",
    "ConfigurationError",
    "ProtocolError",
]
