"""Fixture-driven search backends for offline runs and tests.

Fixture file (JSON)::

    {
      "image": {
        "<sha256 or uri>": {
          "top_image": "<uri>",
          "titles": [{"title": "...", "url": "..."}],
          "extra_images": ["<uri>"]
        }
      },
      "text": {"<query>": [{"text": "...", "source_id": "...", "score": 1.0}]}
    }

Text queries are matched after case-folding and whitespace collapsing.
Unknown requests return empty results. ``failures`` makes the first calls
raise ``BackendUnavailableError`` and ``delay_s`` simulates latency.
"""

from __future__ import annotations

import asyncio
import hashlib
import json
from collections.abc import Mapping
from pathlib import Path
from typing import Any

from src.core.domain.exceptions import BackendUnavailableError
from src.core.domain.models import (
    ImageRef,
    ImageResult,
    PageTitle,
    TextChunk,
    TextResult,
)
from src.core.usecases.tool_env import normalize_text_query


def _digest(data: Mapping[str, Any]) -> str:
    encoded = json.dumps(data, sort_keys=True, default=str).encode()
    return hashlib.sha256(encoded).hexdigest()[:16]


class _FaultInjection:
    def __init__(self, failures: int, delay_s: float) -> None:
        self.failures = failures
        self.delay_s = delay_s
        self.calls = 0

    async def enter(self) -> None:
        self.calls += 1
        if self.delay_s:
            await asyncio.sleep(self.delay_s)
        if self.calls <= self.failures:
            msg = f"injected failure {self.calls}/{self.failures}"
            raise BackendUnavailableError(msg)


class MockImageSearch(_FaultInjection):
    """Image search answering from a fixture table keyed by content hash or URI."""

    def __init__(
        self,
        results: Mapping[str, ImageResult] | None = None,
        *,
        failures: int = 0,
        delay_s: float = 0.0,
    ) -> None:
        super().__init__(failures, delay_s)
        self.results = dict(results or {})

    @classmethod
    def from_fixture(cls, data: Mapping[str, Any]) -> MockImageSearch:
        results = {}
        for key, item in data.get("image", {}).items():
            top = item.get("top_image")
            results[key] = ImageResult(
                top_image=ImageRef.from_url(top) if top else None,
                titles=tuple(
                    PageTitle(t["title"], t.get("url", ""))
                    for t in item.get("titles", [])
                ),
                extra_images=tuple(
                    ImageRef.from_url(u) for u in item.get("extra_images", [])
                ),
            )
        return cls(results)

    @property
    def namespace(self) -> str:
        return f"mock-image:{_digest({k: repr(v) for k, v in self.results.items()})}"

    async def search(
        self, image: ImageRef, top_images: int, top_titles: int
    ) -> ImageResult:
        await self.enter()
        result = self.results.get(image.content_key) or self.results.get(image.uri)
        if result is None:
            return ImageResult(top_image=None)
        return ImageResult(
            top_image=result.top_image,
            titles=result.titles[:top_titles],
            extra_images=result.extra_images[: top_images - 1],
        )

    async def ping(self) -> None:
        return None


class MockTextSearch(_FaultInjection):
    """Text search answering from a fixture table keyed by normalized query."""

    def __init__(
        self,
        results: Mapping[str, tuple[TextChunk, ...]] | None = None,
        *,
        failures: int = 0,
        delay_s: float = 0.0,
    ) -> None:
        super().__init__(failures, delay_s)
        self.results = {
            normalize_text_query(q): tuple(c) for q, c in (results or {}).items()
        }

    @classmethod
    def from_fixture(cls, data: Mapping[str, Any]) -> MockTextSearch:
        return cls(
            {
                query: tuple(
                    TextChunk(
                        c["text"], c.get("source_id", ""), float(c.get("score", 1.0))
                    )
                    for c in chunks
                )
                for query, chunks in data.get("text", {}).items()
            }
        )

    @property
    def namespace(self) -> str:
        return f"mock-text:{_digest({k: repr(v) for k, v in self.results.items()})}"

    @property
    def ttl_s(self) -> float | None:
        return None

    async def search(self, query: str, top_k: int) -> TextResult:
        await self.enter()
        chunks = self.results.get(normalize_text_query(query), ())
        return TextResult(chunks=chunks[:top_k])

    async def ping(self) -> None:
        return None


def load_mock_backends(path: Path) -> tuple[MockImageSearch, MockTextSearch]:
    """Build both mock backends from one fixture file."""
    data = json.loads(path.read_text(encoding="utf-8"))
    return MockImageSearch.from_fixture(data), MockTextSearch.from_fixture(data)
