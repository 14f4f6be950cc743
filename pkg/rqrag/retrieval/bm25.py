"""
Okapi BM25 over a local corpus
"""

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from loguru import logger

from ..exceptions import DuplicateDocument, EmptyIndex, UnknownDocument
from ..models import Document


_TERM_RE = re.compile(r"[^\W_]+")

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


def tokenize(text: str) -> List[str]:
    """Lowercase, split on non-alphanumerics; no stemming, no stopwords"""
    return _TERM_RE.findall(text.lower())


@dataclass
class IndexedDocument:
    id: str
    title: str
    body: str
    tokens: List[str]
    term_freqs: Counter = field(default_factory=Counter)
    # original locator when indexed from a candidate pool
    locator: Optional[str] = None


def _id_key(doc_id: str):
    # numeric ids order numerically, the rest lexicographically after them
    return (0, int(doc_id), "") if doc_id.isdigit() else (1, 0, doc_id)


@dataclass
class CorpusIndex:
    """Immutable once built; safe to share between concurrent readers"""
    documents: List[IndexedDocument]
    doc_freq: Dict[str, int]
    doc_len: Dict[str, int]
    avg_doc_len: float
    total_docs: int
    _by_id: Dict[str, IndexedDocument] = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, records: Iterable[Dict[str, Any]]) -> "CorpusIndex":
        """
        Build an index from {id, title, body} records.

        Raises:
            EmptyIndex: no records
        """
        documents = []
        for record in records:
            body = record.get("body", record.get("snippet", ""))
            tokens = tokenize(body)
            documents.append(IndexedDocument(
                id=str(record["id"]),
                title=record.get("title", ""),
                body=body,
                tokens=tokens,
                term_freqs=Counter(tokens),
                locator=record.get("locator"),
            ))
        if not documents:
            raise EmptyIndex("cannot index an empty corpus", "bm25")

        doc_freq: Counter = Counter()
        for doc in documents:
            doc_freq.update(doc.term_freqs.keys())
        doc_len = {doc.id: len(doc.tokens) for doc in documents}
        if len(doc_len) != len(documents):
            raise DuplicateDocument("duplicate document ids in corpus", "bm25")
        return cls(
            documents=documents,
            doc_freq=dict(doc_freq),
            doc_len=doc_len,
            avg_doc_len=sum(doc_len.values()) / len(documents),
            total_docs=len(documents),
            _by_id={doc.id: doc for doc in documents},
        )

    @classmethod
    def from_documents(cls, documents: List[Document]) -> "CorpusIndex":
        """Index a candidate pool by position; each entry keeps its own locator"""
        return cls.build(
            {"id": str(i), "title": d.title, "body": d.snippet, "locator": d.locator}
            for i, d in enumerate(documents)
        )

    def get(self, doc_id: str) -> IndexedDocument:
        try:
            return self._by_id[doc_id]
        except KeyError:
            raise UnknownDocument(f"document {doc_id} is not in the index", "bm25")

    def idf(self, term: str) -> float:
        df = self.doc_freq.get(term, 0)
        return math.log((self.total_docs - df + 0.5) / (df + 0.5) + 1)


def load_corpus(path: Union[str, Path]) -> CorpusIndex:
    """Read a line-delimited {id, title, body} corpus"""
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    index = CorpusIndex.build(records)
    logger.info(f"indexed {index.total_docs} documents from {path}")
    return index


def bm25_score(
    query_terms: List[str],
    doc_id: str,
    index: CorpusIndex,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> float:
    if k1 <= 0:
        raise ValueError("k1 must be > 0")
    if not 0 <= b <= 1:
        raise ValueError("b must be in [0, 1]")
    doc = index.get(doc_id)
    avg_len = index.avg_doc_len or 1.0
    norm = k1 * (1 - b + b * len(doc.tokens) / avg_len)
    score = 0.0
    for term in query_terms:
        tf = doc.term_freqs.get(term, 0)
        if tf == 0:
            continue
        score += index.idf(term) * tf * (k1 + 1) / (tf + norm)
    return score


def retrieve_bm25(
    query: str,
    k: int,
    index: CorpusIndex,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> List[Document]:
    """Top-k documents by BM25, descending; ties by ascending document id"""
    if k < 1:
        raise ValueError("k must be >= 1")
    if index is None or index.total_docs == 0:
        raise EmptyIndex("index is empty", "bm25")
    terms = tokenize(query)
    scored = [(bm25_score(terms, doc.id, index, k1, b), doc) for doc in index.documents]
    scored.sort(key=lambda pair: (-pair[0], _id_key(pair[1].id)))
    return [
        Document(
            title=doc.title, snippet=doc.body, locator=doc.id if doc.locator is None else doc.locator,
            rank=rank, score=score,
        )
        for rank, (score, doc) in enumerate(scored[:k], 1)
    ]
