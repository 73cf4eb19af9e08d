"""Relevance scorers for retrieve-then-rerank text search."""

from __future__ import annotations

import asyncio
import itertools
import re
from collections.abc import Sequence
from functools import partial

import httpx
import numpy as np
from loguru import logger

from src.core.domain.exceptions import BackendUnavailableError
from src.core.usecases.throttling import SingleFlight

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class LexicalScorer:
    """Share of distinct query tokens that occur in the passage."""

    async def score(self, query: str, passages: Sequence[str]) -> list[float]:
        terms = set(_TOKEN_RE.findall(query.casefold()))
        if not terms:
            return [0.0] * len(passages)
        return [
            len(terms & set(_TOKEN_RE.findall(p.casefold()))) / len(terms)
            for p in passages
        ]


class EmbeddingScorer:
    """Cosine similarity of embeddings from an OpenAI-compatible endpoint.

    Vectors come from ``POST {endpoint}/embeddings``.

    Queries and passages get the E5-style ``query: `` / ``passage: `` prefixes.
    Passage embeddings are memoized per scorer instance. Concurrent callers
    wait on a passage that is already being embedded instead of sending it again.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        api_key: str = "",
        query_prefix: str = "query: ",
        passage_prefix: str = "passage: ",
        batch_size: int = 64,
        timeout_s: float = 60.0,
        client: httpx.AsyncClient | None = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.query_prefix = query_prefix
        self.passage_prefix = passage_prefix
        self.batch_size = batch_size
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.AsyncClient(timeout=timeout_s, headers=headers)
        self._passage_cache: dict[str, np.ndarray] = {}
        self._pending: dict[str, str] = {}
        self._flights: SingleFlight[None] = SingleFlight()
        self._batch_ids = itertools.count()

    async def _embed(self, texts: Sequence[str]) -> np.ndarray:
        try:
            payload = {"model": self.model, "input": list(texts)}
            response = await self._client.post(
                f"{self.endpoint}/embeddings", json=payload
            )
            response.raise_for_status()
            rows = sorted(response.json()["data"], key=lambda row: row["index"])
        except (httpx.HTTPError, KeyError, ValueError) as e:
            logger.warning("Scorer: embedding request failed: {}", e)
            raise BackendUnavailableError(f"Embedding endpoint failed: {e}") from e
        vectors = np.asarray([row["embedding"] for row in rows], dtype=np.float64)
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        return vectors / np.where(norms == 0, 1.0, norms)

    async def score(self, query: str, passages: Sequence[str]) -> list[float]:
        if not passages:
            return []
        await self._embed_passages(passages)
        query_vec = (await self._embed([self.query_prefix + query]))[0]
        matrix = np.stack([self._passage_cache[p] for p in passages])
        return (matrix @ query_vec).tolist()

    async def _embed_passages(self, passages: Sequence[str]) -> None:
        """Fill the memo for ``passages``, joining batches already in flight."""
        missing = [p for p in dict.fromkeys(passages) if p not in self._passage_cache]
        joined = {self._pending[p] for p in missing if p in self._pending}
        fresh = [p for p in missing if p not in self._pending]
        flights = [self._flights.do(key, _settled) for key in joined]
        for start in range(0, len(fresh), self.batch_size):
            batch = fresh[start : start + self.batch_size]
            key = f"passages-{next(self._batch_ids)}"
            self._pending.update(dict.fromkeys(batch, key))
            embed = partial(self._embed_batch, key, batch)
            flights.append(self._flights.do(key, embed))
        await asyncio.gather(*flights)
        # a joined batch may have settled before this caller subscribed to it
        leftover = [p for p in missing if p not in self._passage_cache]
        for start in range(0, len(leftover), self.batch_size):
            batch = leftover[start : start + self.batch_size]
            await self._embed_batch(None, batch)

    async def _embed_batch(self, key: str | None, batch: Sequence[str]) -> None:
        try:
            vectors = await self._embed([self.passage_prefix + p for p in batch])
            self._passage_cache.update(zip(batch, vectors, strict=True))
        finally:
            for p in batch:
                if key is not None and self._pending.get(p) == key:
                    del self._pending[p]


async def _settled() -> None:
    return None
