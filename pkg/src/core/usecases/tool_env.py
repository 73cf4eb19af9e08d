"""Tool environment: dispatch, caching, rate limiting and health checks.

Every search request is keyed by a digest of its normalized form. Results are
looked up in the tool cache first; on a miss exactly one backend call is made
per key even when several rollouts ask at once (single-flight), and the call
waits for its backend's token bucket.
"""

from __future__ import annotations

import hashlib
import json
import time
from collections import Counter
from collections.abc import Awaitable, Callable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

from loguru import logger

from src.core.domain.codec import decode_response, encode_response
from src.core.domain.config import ToolEnvConfig
from src.core.domain.exceptions import EmptyResponseError
from src.core.domain.models import (
    AnswerExpert,
    AnswerResult,
    ImageRef,
    ImageResult,
    ImageSearch,
    MultimodalQuery,
    TextResult,
    TextSearch,
    ToolCall,
    ToolResponse,
    TrajectoryStep,
    canonical_response,
    with_call_metadata,
)
from src.core.ports.outgoing.clients import (
    AnswerGenerator,
    ImageSearchBackend,
    TextSearchBackend,
)
from src.core.ports.outgoing.repositories import ToolCache
from src.core.usecases.prompts import EXPERT_PROMPT
from src.core.usecases.throttling import AsyncTokenBucket, SingleFlight


def normalize_text_query(query: str) -> str:
    """Case-fold and collapse whitespace."""
    return " ".join(query.casefold().split())


def cache_key(tool: str, request: Mapping[str, Any]) -> str:
    """Digest of the tool kind and its normalized request."""
    payload = json.dumps(
        {"tool": tool, "request": request}, sort_keys=True, separators=(",", ":")
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def describe_call(call: ToolCall) -> str:
    """One-line rendering of a tool call for prompts and logs."""
    match call:
        case ImageSearch():
            return "image_search()"
        case TextSearch():
            return f"text_search({call.query!r})"
        case AnswerExpert():
            return "answer_expert()"


def _expert_view(response: ToolResponse) -> str:
    # the expert is text-only: image results contribute their page titles
    match response:
        case ImageResult():
            if not response.titles:
                return "(no matching pages)"
            return "\n".join(f"- {page.title}" for page in response.titles)
        case TextResult():
            if not response.chunks:
                return "(no results)"
            return "\n".join(f"- {chunk.text}" for chunk in response.chunks)
        case AnswerResult():
            return response.answer


def build_expert_prompt(
    query: MultimodalQuery, history: Sequence[TrajectoryStep], reasoning: str
) -> str:
    """Text-only prompt for the answer generator.

    Args:
        query: Question being answered (its image is never included)
        history: Completed steps
        reasoning: Reasoning of the turn that called the expert
    """
    blocks = []
    for i, step in enumerate(history, start=1):
        blocks.append(
            f"Step {i} reasoning: {step.reasoning}\n"
            f"Step {i} tool: {describe_call(step.tool_call)}\n"
            f"Step {i} result:\n{_expert_view(step.tool_response)}"
        )
    blocks.append(f"Final reasoning: {reasoning}")
    return EXPERT_PROMPT.format(question=query.question, history="\n\n".join(blocks))


@dataclass(frozen=True)
class BackendStatus:
    """Outcome of one health probe."""

    name: str
    healthy: bool
    latency_ms: float
    error: str = ""


@dataclass
class ToolEnvStats:
    """Cache and backend counters for run manifests."""

    cache_hits: int = 0
    cache_misses: int = 0
    shared_flights: int = 0
    backend_calls: Counter[str] = field(default_factory=Counter)


class ToolEnvironment:
    """Executes tool calls for the rollout engine.

    Args:
        config: Tool settings
        image_backend: Reverse image search backend
        text_backend: Text search backend
        generator: Answer generator behind ``answer_expert``
        cache: Tool response cache
        limiters: Token bucket per backend name (``image``, ``text``, ``expert``)
        clock: Time source for latency metadata, in seconds
    """

    def __init__(
        self,
        config: ToolEnvConfig,
        image_backend: ImageSearchBackend,
        text_backend: TextSearchBackend,
        generator: AnswerGenerator,
        cache: ToolCache,
        *,
        limiters: Mapping[str, AsyncTokenBucket] | None = None,
        clock: Callable[[], float] = time.perf_counter,
    ) -> None:
        self.config = config
        self.image_backend = image_backend
        self.text_backend = text_backend
        self.generator = generator
        self.cache = cache
        self._limiters = dict(limiters) if limiters is not None else {
            "image": AsyncTokenBucket(config.image_rate_limit_rps),
            "text": AsyncTokenBucket(config.text_rate_limit_rps),
            "expert": AsyncTokenBucket(config.expert_rate_limit_rps),
        }
        self._clock = clock
        self._flights: SingleFlight[ToolResponse] = SingleFlight()
        self._stats = ToolEnvStats()

    def image_request_key(self, image: ImageRef) -> str:
        return cache_key(
            "image_search",
            {
                "backend": self.image_backend.namespace,
                "image": image.content_key,
                "top_images": self.config.image_top_images,
                "top_titles": self.config.image_top_titles,
            },
        )

    def text_request_key(self, query: str) -> str:
        return cache_key(
            "text_search",
            {
                "backend": self.text_backend.namespace,
                "query": normalize_text_query(query),
                "top_k": self.config.text_top_k,
            },
        )

    async def image_search(self, image: ImageRef) -> ImageResult:
        """Reverse image search, truncated to the configured image and title counts.

        Raises:
            BackendUnavailableError: If the backend cannot answer
            InvalidImageError: If the image cannot be used as a query
        """
        cfg = self.config

        async def fetch() -> ImageResult:
            result = await self.image_backend.search(
                image, cfg.image_top_images, cfg.image_top_titles
            )
            return ImageResult(
                top_image=result.top_image,
                titles=result.titles[: cfg.image_top_titles],
                extra_images=result.extra_images[: cfg.image_top_images - 1],
            )

        return await self._cached(
            self.image_request_key(image), None, "image", fetch, ImageResult
        )

    async def text_search(self, query: str) -> TextResult:
        """Text search, truncated to ``text_top_k`` chunks.

        Raises:
            BackendUnavailableError: If the backend cannot answer
            EmptyCorpusError: If the corpus has no chunks
        """
        top_k = self.config.text_top_k

        async def fetch() -> TextResult:
            result = await self.text_backend.search(query, top_k)
            return TextResult(chunks=result.chunks[:top_k])

        return await self._cached(
            self.text_request_key(query),
            self.text_backend.ttl_s,
            "text",
            fetch,
            TextResult,
        )

    async def answer_expert(
        self,
        query: MultimodalQuery,
        history: Sequence[TrajectoryStep],
        reasoning: str,
    ) -> AnswerResult:
        """Ask the answer generator for the final answer.

        Raises:
            BackendUnavailableError: If the generator cannot answer
            EmptyResponseError: If the generator returns blank text
        """
        prompt = build_expert_prompt(query, history, reasoning)
        start = self._clock()
        await self._limiters["expert"].acquire()
        self._stats.backend_calls["expert"] += 1
        answer = (await self.generator.generate(prompt)).strip()
        if not answer:
            msg = f"Answer generator returned blank text for {query.id}"
            raise EmptyResponseError(msg)
        latency_ms = int((self._clock() - start) * 1000)
        return AnswerResult(answer=answer, latency_ms=latency_ms)

    async def dispatch(
        self,
        call: ToolCall,
        query: MultimodalQuery,
        history: Sequence[TrajectoryStep],
        reasoning: str,
    ) -> ToolResponse:
        """Execute one parsed tool call.

        ``ImageSearch`` calls must already be bound to an image.
        """
        match call:
            case ImageSearch(image=None):
                return await self.image_search(query.image)
            case ImageSearch(image=image) if image is not None:
                return await self.image_search(image)
            case TextSearch(query=text):
                return await self.text_search(text)
            case AnswerExpert():
                return await self.answer_expert(query, history, reasoning)
        msg = f"Unsupported tool call {call!r}"
        raise TypeError(msg)

    async def health_check(self) -> dict[str, BackendStatus]:
        """Probe every backend once, each probe through its rate limiter."""
        probes: dict[str, Callable[[], Awaitable[None]]] = {
            "image": self.image_backend.ping,
            "text": self.text_backend.ping,
            "expert": self.generator.ping,
        }
        statuses: dict[str, BackendStatus] = {}
        for name, probe in probes.items():
            await self._limiters[name].acquire()
            start = self._clock()
            try:
                await probe()
            except Exception as e:
                error = f"{type(e).__name__}: {e}"
                healthy = False
            else:
                error = ""
                healthy = True
            latency = (self._clock() - start) * 1000
            statuses[name] = BackendStatus(name, healthy, latency, error)
            logger.info(
                "ToolEnv: health {} healthy={} latency_ms={:.1f}",
                name,
                healthy,
                latency,
            )
        return statuses

    def stats(self) -> ToolEnvStats:
        """Counters accumulated since construction."""
        self._stats.shared_flights = self._flights.joins
        return self._stats

    async def _cached[R: (ImageResult, TextResult)](
        self,
        key: str,
        max_age_s: float | None,
        backend: str,
        fetch: Callable[[], Awaitable[R]],
        expected: type[R],
    ) -> R:
        start = self._clock()
        entry = self.cache.get(key, max_age_s)
        if entry is not None:
            cached = decode_response(entry.value)
            if isinstance(cached, expected):
                self._stats.cache_hits += 1
                latency_ms = int((self._clock() - start) * 1000)
                logger.debug("ToolEnv: cache hit {} key={}", backend, key[:12])
                return with_call_metadata(cached, latency_ms, True)
            logger.warning(
                "ToolEnv: cache entry {} holds {}, refetching", key[:12], cached.kind
            )

        self._stats.cache_misses += 1

        async def fetch_and_store() -> ToolResponse:
            await self._limiters[backend].acquire()
            self._stats.backend_calls[backend] += 1
            response = canonical_response(await fetch())
            self.cache.put(key, encode_response(response))
            return response

        response, shared = await self._flights.do(key, fetch_and_store)
        if not isinstance(response, expected):
            msg = f"Backend {backend} returned {response.kind}"
            raise TypeError(msg)
        latency_ms = int((self._clock() - start) * 1000)
        return with_call_metadata(response, latency_ms, shared)
