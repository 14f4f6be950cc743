"""
Builders shared by the test modules
"""

import json
import re
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

from rqrag.exceptions import SearchUnavailable
from rqrag.generators.base import BaseGenerator, apply_limits, split_tokens
from rqrag.models import Completion, DecodeParams, Document, RetrievalSource, Trajectory
from rqrag.retrieval.retrievers import BaseRetriever


FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def root_prompt(question: str) -> str:
    """Regex matching the root prefix of question"""
    return r"\A" + re.escape(question) + r"\n\Z"


def after(query: str, forced: bool = False) -> str:
    """Regex matching a prefix whose last step is query (plus the answer opener when forced)"""
    pattern = re.escape(query) + r"\n\[R_EVIDENCE\][^\[]*\[/R_EVIDENCE\]\n"
    if forced:
        pattern += r"\[A_RESPONSE\] "
    return pattern + r"\Z"


def completion(text: str, log_probs: Optional[List[float]] = None, default: float = -1.0) -> Completion:
    tokens = split_tokens(text)
    return Completion(text=text, tokens=tokens, log_probs=log_probs or [default] * len(tokens))


class FunctionGenerator(BaseGenerator):
    """Concurrent-safe generator answering through a callable(prompt, n)"""

    name = "function"
    concurrent_safe = True

    def __init__(self, reply: Callable[[str, int], Sequence[Union[str, Completion]]]):
        self.reply = reply
        self.prompts: List[str] = []

    async def complete_many(self, prompt: str, params: DecodeParams, n: int) -> List[Completion]:
        self._check_request(prompt, n)
        self.prompts.append(prompt)
        out = []
        for item in list(self.reply(prompt, n))[:n]:
            out.append(apply_limits(completion(item) if isinstance(item, str) else item, params))
        return out


class StubRetriever(BaseRetriever):
    """Returns the same documents for every query; queries in fail_on raise"""

    source = RetrievalSource.WEB_SEARCH

    def __init__(self, documents: Optional[List[Document]] = None, fail_on: Sequence[str] = ()):
        self.documents = documents if documents is not None else [
            Document(title="Doc one", snippet="first snippet", locator="loc-1"),
            Document(title="Doc two", snippet="second snippet", locator="loc-2"),
            Document(title="Doc three", snippet="third snippet", locator="loc-3"),
        ]
        self.fail_on = set(fail_on)
        self.queries: List[str] = []

    async def retrieve(self, query: str, k: int, candidates: Optional[List[Document]] = None) -> List[Document]:
        self.queries.append(query)
        if query in self.fail_on:
            raise SearchUnavailable(f"stub refuses {query!r}", "stub")
        return [replace(d, rank=rank) for rank, d in enumerate(self.documents[:k], 1)]


def trajectory_json(trajectories: List[Trajectory]) -> str:
    return json.dumps([t.to_dict() for t in trajectories], sort_keys=True)


def write_config(path: Path, data: Dict) -> Path:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f)
    return path


