"""
Embedding-based reranking of a provided candidate pool
"""

import asyncio
import hashlib
import os
from abc import ABC, abstractmethod
from dataclasses import replace
from typing import List, Optional

import numpy as np
import openai
from loguru import logger
from openai import AsyncOpenAI

from ..exceptions import DimensionMismatch, EmbeddingUnavailable
from ..models import Document
from .bm25 import tokenize


class Embedder(ABC):
    """Embedding service: list of texts in, equal-dimension vectors out"""

    name = "embedder"

    @abstractmethod
    async def embed(self, texts: List[str]) -> List[List[float]]:
        pass

    async def close(self):
        pass


class OpenAIEmbedder(Embedder):
    """OpenAI-compatible embeddings endpoint (base URL from RQ_EMBED_URL)"""

    name = "openai-embeddings"

    def __init__(
        self,
        model: str = "text-embedding-3-large",
        api_key: Optional[str] = None,
        base_url: Optional[str] = None,
        max_in_flight: int = 8,
        batch_size: int = 64,
    ):
        self.model = model
        self.batch_size = batch_size
        self.client = AsyncOpenAI(
            api_key=api_key or os.getenv("OPENAI_API_KEY"),
            base_url=base_url or os.getenv("RQ_EMBED_URL") or None,
        )
        self._in_flight = asyncio.Semaphore(max_in_flight)

    async def embed(self, texts: List[str]) -> List[List[float]]:
        vectors: List[List[float]] = []
        for start in range(0, len(texts), self.batch_size):
            batch = texts[start:start + self.batch_size]
            try:
                async with self._in_flight:
                    response = await self.client.embeddings.create(model=self.model, input=batch)
            except openai.OpenAIError as e:
                raise EmbeddingUnavailable(f"{self.model} embeddings failed: {e}", self.name)
            data = sorted(response.data, key=lambda item: item.index)
            vectors.extend(list(item.embedding) for item in data)
        return vectors

    async def close(self):
        await self.client.close()


class HashingEmbedder(Embedder):
    """Deterministic offline bag-of-words embedder (hashed term counts)"""

    name = "hashing"

    def __init__(self, dimension: int = 256):
        if dimension < 1:
            raise ValueError("dimension must be > 0")
        self.dimension = dimension

    async def embed(self, texts: List[str]) -> List[List[float]]:
        vectors = []
        for text in texts:
            vec = [0.0] * self.dimension
            for term in tokenize(text):
                digest = hashlib.md5(term.encode("utf-8")).digest()
                vec[int.from_bytes(digest[:4], "little") % self.dimension] += 1.0
            vectors.append(vec)
        return vectors


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.dot(a, b) / denom)


async def retrieve_embedding(
    query: str,
    candidates: List[Document],
    k: int,
    embedder: Embedder,
) -> List[Document]:
    """Rank candidates by cosine similarity to the query; ties keep candidate order"""
    if not candidates:
        raise ValueError("candidates must be non-empty")
    if k < 1:
        raise ValueError("k must be >= 1")

    texts = [query] + [f"{d.title} {d.snippet}".strip() for d in candidates]
    vectors = await embedder.embed(texts)
    if len(vectors) != len(texts):
        raise DimensionMismatch(f"asked for {len(texts)} embeddings, got {len(vectors)}", embedder.name)
    dims = {len(v) for v in vectors}
    if len(dims) != 1 or 0 in dims:
        raise DimensionMismatch(f"embedding dimensions differ: {sorted(dims)}", embedder.name)

    matrix = np.asarray(vectors, dtype=np.float64)
    query_vec = matrix[0]
    sims = [cosine(query_vec, row) for row in matrix[1:]]
    order = sorted(range(len(candidates)), key=lambda i: -sims[i])
    logger.debug(f"embedding rerank of {len(candidates)} candidates, keeping {min(k, len(candidates))}")
    return [
        replace(candidates[i], rank=rank, score=sims[i])
        for rank, i in enumerate(order[:k], 1)
    ]
