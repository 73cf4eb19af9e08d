"""Serper.dev backends: Google Lens reverse image search and Google web search.

Both take an API key in the ``X-API-KEY`` header. Rate limiting and retries
happen in the tool environment and rollout engine; these clients only
translate requests and map HTTP failures to ``BackendUnavailableError``.
"""

from __future__ import annotations

from typing import Any

import httpx
from loguru import logger

from src.core.domain.exceptions import BackendUnavailableError, InvalidImageError
from src.core.domain.models import (
    ImageRef,
    ImageResult,
    PageTitle,
    TextChunk,
    TextResult,
)

CANARY_IMAGE_URL = (
    "https://upload.wikimedia.org/wikipedia/commons/a/a8/"
    "Tour_Eiffel_Wikimedia_Commons.jpg"
)


async def _post(
    client: httpx.AsyncClient, url: str, api_key: str, payload: dict[str, Any]
) -> dict[str, Any]:
    try:
        response = await client.post(url, json=payload, headers={"X-API-KEY": api_key})
        response.raise_for_status()
        body: dict[str, Any] = response.json()
    except httpx.HTTPStatusError as e:
        logger.warning("Serper: {} answered {}", url, e.response.status_code)
        raise BackendUnavailableError(f"{url} answered {e.response.status_code}") from e
    except (httpx.HTTPError, ValueError) as e:
        logger.warning("Serper: {} failed: {}", url, e)
        raise BackendUnavailableError(f"{url} failed: {e}") from e
    return body


class SerperImageSearch:
    """Reverse image search through Serper's Lens endpoint.

    Lens needs a publicly reachable image URL, so local files and ``data:``
    images are rejected with ``InvalidImageError``.
    """

    def __init__(
        self,
        api_key: str,
        *,
        url: str = "https://google.serper.dev/lens",
        timeout_s: float = 30.0,
        client: httpx.AsyncClient | None = None,
    ) -> None:
        self.api_key = api_key
        self.url = url
        self._client = client or httpx.AsyncClient(timeout=timeout_s)

    @property
    def namespace(self) -> str:
        return "serper-lens"

    async def search(
        self, image: ImageRef, top_images: int, top_titles: int
    ) -> ImageResult:
        if not image.is_remote:
            msg = f"Lens search needs a public image URL, got {image.uri[:60]}"
            raise InvalidImageError(msg)
        body = await _post(self._client, self.url, self.api_key, {"url": image.uri})
        organic = body.get("organic") or []
        images = [
            ImageRef.from_url(item["imageUrl"])
            for item in organic
            if item.get("imageUrl")
        ][:top_images]
        titles = tuple(
            PageTitle(title=item["title"], url=item.get("link", ""))
            for item in organic
            if item.get("title")
        )[:top_titles]
        return ImageResult(
            top_image=images[0] if images else None,
            titles=titles,
            extra_images=tuple(images[1:]),
        )

    async def ping(self) -> None:
        await _post(self._client, self.url, self.api_key, {"url": CANARY_IMAGE_URL})


class SerperWebSearch:
    """Web search through Serper; each organic hit becomes one chunk.

    Scores are reciprocal ranks since the engine reports none.
    """

    def __init__(
        self,
        api_key: str,
        *,
        url: str = "https://google.serper.dev/search",
        ttl_s: float = 7 * 24 * 3600,
        timeout_s: float = 30.0,
        client: httpx.AsyncClient | None = None,
    ) -> None:
        self.api_key = api_key
        self.url = url
        self._ttl_s = ttl_s
        self._client = client or httpx.AsyncClient(timeout=timeout_s)

    @property
    def namespace(self) -> str:
        return "serper-web"

    @property
    def ttl_s(self) -> float | None:
        return self._ttl_s

    async def search(self, query: str, top_k: int) -> TextResult:
        payload = {"q": query, "num": top_k}
        body = await _post(self._client, self.url, self.api_key, payload)
        chunks = []
        for rank, item in enumerate((body.get("organic") or [])[:top_k], start=1):
            text = "\n".join(p for p in (item.get("title"), item.get("snippet")) if p)
            if text:
                chunks.append(
                    TextChunk(
                        text=text, source_id=item.get("link", ""), score=1.0 / rank
                    )
                )
        return TextResult(chunks=tuple(chunks))

    async def ping(self) -> None:
        await _post(self._client, self.url, self.api_key, {"q": "ping", "num": 1})
