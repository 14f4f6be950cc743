"""
Retriever adapters used by the engine and the dataset builder.

The engine treats every backend as a black box: a query and k go in,
ranked Documents come out.
"""

from abc import ABC, abstractmethod
from typing import Iterable, List, Optional

from loguru import logger

from ..exceptions import EmptyIndex
from ..models import Document, RetrievalSource, SearchStep
from .bm25 import CorpusIndex, retrieve_bm25
from .embedding import Embedder, retrieve_embedding
from .web import BaseSearchClient, web_search


class BaseRetriever(ABC):
    source: RetrievalSource

    @abstractmethod
    async def retrieve(self, query: str, k: int, candidates: Optional[List[Document]] = None) -> List[Document]:
        """
        Return at most k documents for query.

        Args:
            query: Refined query text
            k: Number of documents to keep
            candidates: Per-item candidate pool (reading-comprehension sets)
        """
        pass

    async def close(self):
        pass


class Bm25Retriever(BaseRetriever):
    """BM25 over the configured corpus, or over the item's candidate pool when given"""

    source = RetrievalSource.BM25_CORPUS

    def __init__(self, index: Optional[CorpusIndex] = None, k1: float = 1.2, b: float = 0.75):
        self.index = index
        self.k1 = k1
        self.b = b

    async def retrieve(self, query: str, k: int, candidates: Optional[List[Document]] = None) -> List[Document]:
        index = CorpusIndex.from_documents(candidates) if candidates else self.index
        if index is None:
            raise EmptyIndex("no corpus configured and no candidates supplied", "bm25")
        return retrieve_bm25(query, k, index, self.k1, self.b)


class EmbeddingRetriever(BaseRetriever):
    source = RetrievalSource.EMBEDDING_CANDIDATES

    def __init__(self, embedder: Embedder):
        self.embedder = embedder

    async def retrieve(self, query: str, k: int, candidates: Optional[List[Document]] = None) -> List[Document]:
        if not candidates:
            raise EmptyIndex("embedding retrieval reranks candidates and none were supplied", self.embedder.name)
        return await retrieve_embedding(query, candidates, k, self.embedder)

    async def close(self):
        await self.embedder.close()


class WebRetriever(BaseRetriever):
    source = RetrievalSource.WEB_SEARCH

    def __init__(self, client: BaseSearchClient):
        self.client = client

    async def retrieve(self, query: str, k: int, candidates: Optional[List[Document]] = None) -> List[Document]:
        if candidates:
            logger.debug("web retriever ignores the candidate pool")
        return await web_search(query, k, self.client)

    async def close(self):
        await self.client.close()


def covers_support(steps: Iterable[SearchStep], support_ids: List[str]) -> bool:
    """True when every gold support id appears among the retrieved documents"""
    retrieved = {doc.locator for step in steps for doc in step.documents}
    return all(sid in retrieved for sid in support_ids)
