"""Local-corpus text search: chunking plus retrieve-then-rerank.

Documents are cut into overlapping character windows. A query is scored
against every chunk by the retriever, the best ``first_stage_k`` are rescored
by the reranker and the best ``top_k`` of those are returned. Ties break on
(source id, offset) so rankings are deterministic.
"""

from __future__ import annotations

import hashlib
from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property

from loguru import logger

from src.core.domain.exceptions import EmptyCorpusError
from src.core.domain.models import TextChunk, TextResult
from src.core.ports.outgoing.clients import Scorer


@dataclass(frozen=True)
class Document:
    """One corpus document (e.g. an encyclopedia article)."""

    id: str
    text: str
    title: str = ""


@dataclass(frozen=True)
class Chunk:
    """A character window of a document."""

    source_id: str
    offset: int
    text: str


def chunk_document(document: Document, size: int, overlap: int) -> list[Chunk]:
    """Tile a document with windows of ``size`` characters overlapping by ``overlap``.

    The last window ends at the end of the text; empty documents give no chunks.
    """
    if overlap >= size:
        msg = f"overlap ({overlap}) must be smaller than size ({size})"
        raise ValueError(msg)
    text = document.text
    chunks: list[Chunk] = []
    start = 0
    while text:
        end = min(start + size, len(text))
        chunks.append(Chunk(document.id, start, text[start:end]))
        if end == len(text):
            break
        start += size - overlap
    return chunks


@dataclass(frozen=True)
class Corpus:
    """Chunked documents."""

    documents: tuple[Document, ...]
    chunks: tuple[Chunk, ...]
    chunk_size: int
    chunk_overlap: int

    @classmethod
    def from_documents(
        cls, documents: Sequence[Document], chunk_size: int, chunk_overlap: int
    ) -> Corpus:
        chunks = tuple(
            chunk
            for document in documents
            for chunk in chunk_document(document, chunk_size, chunk_overlap)
        )
        logger.info("Corpus: {} documents, {} chunks", len(documents), len(chunks))
        return cls(tuple(documents), chunks, chunk_size, chunk_overlap)

    @cached_property
    def digest(self) -> str:
        """Content hash of documents and chunking parameters."""
        h = hashlib.sha256(f"{self.chunk_size}:{self.chunk_overlap}".encode())
        for document in self.documents:
            h.update(b"\x00" + document.id.encode("utf-8"))
            h.update(b"\x01" + document.text.encode("utf-8"))
        return h.hexdigest()


def _rank(scores: Sequence[float], chunks: Sequence[Chunk]) -> list[int]:
    return sorted(
        range(len(chunks)),
        key=lambda i: (-scores[i], chunks[i].source_id, chunks[i].offset),
    )


class RetrieveRerankSearch:
    """Two-stage text search over a local corpus.

    Args:
        corpus: Chunked corpus
        retriever: First-stage scorer
        reranker: Second-stage scorer
        first_stage_k: Candidates passed from retriever to reranker
    """

    def __init__(
        self, corpus: Corpus, retriever: Scorer, reranker: Scorer, first_stage_k: int
    ) -> None:
        self.corpus = corpus
        self.retriever = retriever
        self.reranker = reranker
        self.first_stage_k = first_stage_k

    @property
    def namespace(self) -> str:
        return f"local:{self.corpus.digest[:16]}:{self.first_stage_k}"

    @property
    def ttl_s(self) -> float | None:
        return None

    async def search(self, query: str, top_k: int) -> TextResult:
        """Return the ``top_k`` best chunks for ``query``.

        Raises:
            EmptyCorpusError: If the corpus has no chunks
        """
        chunks = self.corpus.chunks
        if not chunks:
            raise EmptyCorpusError("Corpus has no chunks to search")

        first = await self.retriever.score(query, [c.text for c in chunks])
        candidates = [chunks[i] for i in _rank(first, chunks)[: self.first_stage_k]]

        second = await self.reranker.score(query, [c.text for c in candidates])
        ranked = _rank(second, candidates)[:top_k]
        return TextResult(
            chunks=tuple(
                TextChunk(
                    text=candidates[i].text,
                    source_id=candidates[i].source_id,
                    score=float(second[i]),
                    offset=candidates[i].offset,
                )
                for i in ranked
            )
        )

    async def ping(self) -> None:
        if not self.corpus.chunks:
            raise EmptyCorpusError("Corpus has no chunks to search")
