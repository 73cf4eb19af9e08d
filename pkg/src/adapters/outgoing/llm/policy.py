"""HTTP client for the policy model (OpenAI-compatible chat completions).

The policy is the model being trained, so the client asks for per-token
log-probabilities; they become the "old" log-probabilities of exported
training batches.
"""

from __future__ import annotations

import base64
from collections.abc import Sequence
from typing import Any

import httpx
from loguru import logger
from tenacity import (
    AsyncRetrying,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from src.core.domain.exceptions import InvalidImageError, PolicyUnavailableError
from src.core.domain.models import ChatMessage, ImageRef, PolicyTurn


def image_part(image: ImageRef) -> dict[str, Any]:
    """OpenAI ``image_url`` content part for an image reference."""
    if image.is_remote or image.uri.startswith("data:"):
        url = image.uri
    else:
        encoded = base64.b64encode(image.read_bytes()).decode("ascii")
        url = f"data:{image.media_type};base64,{encoded}"
    return {"type": "image_url", "image_url": {"url": url}}


def to_openai_messages(messages: Sequence[ChatMessage]) -> list[dict[str, Any]]:
    """Convert chat messages, attaching images as content parts."""
    out: list[dict[str, Any]] = []
    for message in messages:
        if not message.images:
            out.append({"role": message.role, "content": message.content})
            continue
        parts: list[dict[str, Any]] = [image_part(image) for image in message.images]
        parts.append({"type": "text", "text": message.content})
        out.append({"role": message.role, "content": parts})
    return out


class HttpPolicyClient:
    """Policy client over ``POST {endpoint}/chat/completions``.

    Args:
        endpoint: Base URL ending in ``/v1``
        model: Served model name
        api_key: Bearer token
        timeout_s: Request timeout
        request_logprobs: Ask for per-token log-probabilities
        attempts: Attempts on transport errors and 5xx replies
        backoff_s: Base of the exponential backoff between attempts
        client: Shared httpx client; one is created when omitted
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        api_key: str = "",
        timeout_s: float = 120.0,
        request_logprobs: bool = True,
        attempts: int = 3,
        backoff_s: float = 0.5,
        client: httpx.AsyncClient | None = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.request_logprobs = request_logprobs
        self.attempts = attempts
        self.backoff_s = backoff_s
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.AsyncClient(timeout=timeout_s, headers=headers)

    async def complete(
        self,
        messages: Sequence[ChatMessage],
        *,
        temperature: float,
        max_tokens: int,
    ) -> PolicyTurn:
        try:
            payload: dict[str, Any] = {
                "model": self.model,
                "messages": to_openai_messages(messages),
                "temperature": temperature,
                "max_tokens": max_tokens,
            }
        except InvalidImageError as e:
            raise PolicyUnavailableError(f"Cannot encode policy context: {e}") from e
        if self.request_logprobs:
            payload["logprobs"] = True

        try:
            async for attempt in AsyncRetrying(
                stop=stop_after_attempt(self.attempts),
                wait=wait_exponential(multiplier=self.backoff_s),
                retry=retry_if_exception_type((httpx.TransportError, _ServerError)),
                reraise=True,
            ):
                with attempt:
                    response = await self._client.post(
                        f"{self.endpoint}/chat/completions", json=payload
                    )
                    if response.status_code >= 500:
                        raise _ServerError(response.status_code)
                    response.raise_for_status()
        except (httpx.HTTPError, _ServerError) as e:
            logger.error("Policy: {} unreachable: {}", self.endpoint, e)
            raise PolicyUnavailableError(f"Policy endpoint {self.endpoint}: {e}") from e

        return parse_completion(response.json())

    async def aclose(self) -> None:
        await self._client.aclose()


class _ServerError(Exception):
    def __init__(self, status: int) -> None:
        super().__init__(f"server error {status}")


def parse_completion(body: dict[str, Any]) -> PolicyTurn:
    """Extract the turn text and token log-probabilities from a completion body.

    Raises:
        PolicyUnavailableError: If the body has no message content
    """
    try:
        choice = body["choices"][0]
        text = choice["message"]["content"] or ""
    except (KeyError, IndexError, TypeError) as e:
        raise PolicyUnavailableError(f"Malformed completion body: {e}") from e
    content = (choice.get("logprobs") or {}).get("content")
    logprobs = tuple(float(item["logprob"]) for item in content) if content else None
    return PolicyTurn(text=text, logprobs=logprobs)
