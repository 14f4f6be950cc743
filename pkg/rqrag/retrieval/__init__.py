"""
Retrieval backends: BM25 corpus, embedding rerank, web search
"""

from .bm25 import CorpusIndex, bm25_score, load_corpus, retrieve_bm25, tokenize
from .embedding import Embedder, HashingEmbedder, OpenAIEmbedder, retrieve_embedding
from .web import (
    BaseSearchClient, DuckDuckGoSearch, JsonSearchClient, StaticSearch, web_search,
)
from .retrievers import (
    BaseRetriever, Bm25Retriever, EmbeddingRetriever, WebRetriever, covers_support,
)

__all__ = [
    "CorpusIndex",
    "bm25_score",
    "load_corpus",
    "retrieve_bm25",
    "tokenize",
    "Embedder",
    "HashingEmbedder",
    "OpenAIEmbedder",
    "retrieve_embedding",
    "BaseSearchClient",
    "DuckDuckGoSearch",
    "JsonSearchClient",
    "StaticSearch",
    "web_search",
    "BaseRetriever",
    "Bm25Retriever",
    "EmbeddingRetriever",
    "WebRetriever",
    "covers_support",
]
