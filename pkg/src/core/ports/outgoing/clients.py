"""Outgoing port interfaces for models and search backends.

Use cases depend on these contracts; adapters (HTTP clients, pydantic-ai
agents, deterministic stubs) implement them.
"""

from collections.abc import Sequence
from typing import Protocol

from src.core.domain.graph import CandidateQuestion
from src.core.domain.models import (
    ChatMessage,
    ImageRef,
    ImageResult,
    PolicyTurn,
    TextResult,
)


class PolicyClient(Protocol):
    """The trainable agent: produces the next assistant turn."""

    async def complete(
        self,
        messages: Sequence[ChatMessage],
        *,
        temperature: float,
        max_tokens: int,
    ) -> PolicyTurn:
        """Generate the next assistant turn.

        Args:
            messages: System prompt, question and alternating turns
            temperature: Sampling temperature
            max_tokens: Token budget of the turn

        Returns:
            Turn text and per-token log-probabilities when available

        Raises:
            PolicyUnavailableError: If the endpoint cannot answer
        """
        ...


class JudgeClient(Protocol):
    """LLM-as-judge: returns free text from which a verdict is parsed."""

    async def complete(self, prompt: str) -> str:
        """Answer a judge prompt.

        Raises:
            BackendUnavailableError: If the judge endpoint cannot answer
        """
        ...


class AnswerGenerator(Protocol):
    """Text-only generator that synthesizes the final answer."""

    async def generate(self, prompt: str) -> str:
        """Produce an answer from the question and gathered evidence.

        Raises:
            BackendUnavailableError: If the generator endpoint cannot answer
        """
        ...

    async def ping(self) -> None:
        """Probe the endpoint with a canary request."""
        ...


class Solver(Protocol):
    """Model that attempts dataset questions for difficulty labeling."""

    async def solve(self, question: CandidateQuestion) -> str:
        """Answer a candidate question.

        Raises:
            SolverUnavailableError: If the solver cannot answer
        """
        ...


class ImageSearchBackend(Protocol):
    """Reverse image search returning similar images and page titles."""

    @property
    def namespace(self) -> str:
        """Cache namespace identifying the backend and its data."""
        ...

    async def search(
        self, image: ImageRef, top_images: int, top_titles: int
    ) -> ImageResult:
        """Search for pages containing images similar to ``image``.

        Raises:
            BackendUnavailableError: If the backend cannot answer
            InvalidImageError: If the image cannot be used as a query
        """
        ...

    async def ping(self) -> None:
        """Probe the backend with a canary request."""
        ...


class TextSearchBackend(Protocol):
    """Text search returning ranked chunks."""

    @property
    def namespace(self) -> str:
        """Cache namespace identifying the backend and its data."""
        ...

    @property
    def ttl_s(self) -> float | None:
        """Freshness bound of cached results (None = never expire)."""
        ...

    async def search(self, query: str, top_k: int) -> TextResult:
        """Return at most ``top_k`` chunks for ``query``.

        Raises:
            BackendUnavailableError: If the backend cannot answer
            EmptyCorpusError: If there is nothing to search
        """
        ...

    async def ping(self) -> None:
        """Probe the backend with a canary request."""
        ...


class Scorer(Protocol):
    """Relevance scorer over (query, passage) pairs."""

    async def score(self, query: str, passages: Sequence[str]) -> list[float]:
        """Score every passage against the query (higher is more relevant)."""
        ...


class Tokenizer(Protocol):
    """Maps text to token ids of the trainer's vocabulary."""

    @property
    def name(self) -> str:
        """Identifier recorded in exported batches."""
        ...

    def encode(self, text: str) -> list[int]:
        """Tokenize ``text`` without adding special tokens."""
        ...
