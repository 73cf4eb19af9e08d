"""Unit tests for corpus chunking and retrieve-then-rerank search."""

import random
from collections.abc import Sequence

import pytest

from src.adapters.outgoing.search.scorers import LexicalScorer
from src.core.domain.exceptions import EmptyCorpusError
from src.core.usecases.retrieval import (
    Corpus,
    Document,
    RetrieveRerankSearch,
    chunk_document,
)

WORDS = "ardent tower brindle alder voss kestria bridge river hall spire".split()


class TableScorer:
    """Scores passages from a fixed table (missing passages score 0)."""

    def __init__(self, table: dict[str, float]) -> None:
        self.table = table

    async def score(self, query: str, passages: Sequence[str]) -> list[float]:
        return [self.table.get(p, 0.0) for p in passages]


@pytest.mark.unit
class TestChunking:
    """Tests for overlapping character windows."""

    def test_windows_overlap_and_cover_the_text(self) -> None:
        """Windows advance by size - overlap and the last one ends the text."""
        chunks = chunk_document(Document("d", "abcdefghij"), size=4, overlap=1)

        assert [(c.offset, c.text) for c in chunks] == [
            (0, "abcd"),
            (3, "defg"),
            (6, "ghij"),
        ]

    def test_short_and_empty_documents(self) -> None:
        """Short texts give one chunk, empty texts none."""
        assert len(chunk_document(Document("d", "abc"), 10, 2)) == 1
        assert chunk_document(Document("d", ""), 10, 2) == []

    def test_overlap_must_be_smaller_than_size(self) -> None:
        """Degenerate windows are rejected."""
        with pytest.raises(ValueError):
            chunk_document(Document("d", "abc"), 3, 3)

    def test_corpus_digest_tracks_content(self) -> None:
        """Changing a document or the chunking changes the digest."""

        def digest(text: str, size: int = 10) -> str:
            return Corpus.from_documents([Document("d", text)], size, 2).digest

        assert digest("text") == digest("text")
        assert digest("text") != digest("txt")
        assert digest("text") != digest("text", size=9)


@pytest.mark.unit
class TestRetrieveRerank:
    """Tests for two-stage ranking."""

    async def test_reranker_reorders_first_stage_candidates(self) -> None:
        """Only first-stage candidates are reranked, in the reranker's order."""
        docs = [Document(f"d{i}", f"passage {i}") for i in range(4)]
        corpus = Corpus.from_documents(docs, 100, 10)
        retriever = TableScorer({"passage 0": 4, "passage 1": 3, "passage 2": 2})
        reranker = TableScorer({"passage 1": 9, "passage 0": 1, "passage 3": 100})
        search = RetrieveRerankSearch(corpus, retriever, reranker, first_stage_k=2)

        result = await search.search("q", top_k=2)

        assert [c.source_id for c in result.chunks] == ["d1", "d0"]
        assert [c.score for c in result.chunks] == [9.0, 1.0]

    async def test_ties_break_on_source_and_offset(self) -> None:
        """Equal scores rank by (source id, offset)."""
        docs = [Document("b", "same"), Document("a", "same")]
        search = RetrieveRerankSearch(
            Corpus.from_documents(docs, 100, 10), LexicalScorer(), LexicalScorer(), 10
        )

        result = await search.search("same", top_k=2)

        assert [c.source_id for c in result.chunks] == ["a", "b"]

    async def test_empty_corpus_raises(self) -> None:
        """Searching nothing is an environment fault."""
        search = RetrieveRerankSearch(
            Corpus.from_documents([], 100, 10), LexicalScorer(), LexicalScorer(), 10
        )

        with pytest.raises(EmptyCorpusError):
            await search.search("q", 3)
        with pytest.raises(EmptyCorpusError):
            await search.ping()

    async def test_results_are_contained_in_first_stage(self) -> None:
        """On random corpora the reranked top-k is a subset of the first stage."""
        rng = random.Random(11)
        retriever = LexicalScorer()
        for _ in range(1000):
            docs = [
                Document(f"d{i}", " ".join(rng.choices(WORDS, k=rng.randint(1, 8))))
                for i in range(rng.randint(1, 12))
            ]
            corpus = Corpus.from_documents(docs, 20, 5)
            reranker = TableScorer({c.text: rng.random() for c in corpus.chunks})
            first_k = rng.randint(1, 6)
            top_k = rng.randint(1, first_k)
            query = " ".join(rng.sample(WORDS, 2))
            search = RetrieveRerankSearch(corpus, retriever, reranker, first_k)

            result = await search.search(query, top_k)

            scores = await retriever.score(query, [c.text for c in corpus.chunks])
            first_stage = sorted(
                range(len(corpus.chunks)),
                key=lambda i: (
                    -scores[i],
                    corpus.chunks[i].source_id,
                    corpus.chunks[i].offset,
                ),
            )[:first_k]
            allowed = {
                (corpus.chunks[i].source_id, corpus.chunks[i].offset)
                for i in first_stage
            }
            assert len(result.chunks) == min(top_k, len(corpus.chunks))
            assert {(c.source_id, c.offset) for c in result.chunks} <= allowed


@pytest.mark.unit
class TestLexicalScorer:
    """Tests for the offline relevance scorer."""

    async def test_share_of_query_terms(self) -> None:
        """The score is the fraction of distinct query terms present."""
        scores = await LexicalScorer().score(
            "Ardent Tower architect", ["The Ardent Tower", "nothing", "ARCHITECT"]
        )

        assert scores == pytest.approx([2 / 3, 0.0, 1 / 3])

    async def test_empty_query_scores_zero(self) -> None:
        """A query without terms matches nothing."""
        assert await LexicalScorer().score("?!", ["a", "b"]) == [0.0, 0.0]
