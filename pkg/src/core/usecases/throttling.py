"""Asyncio helpers for talking to metered backends.

``AsyncTokenBucket`` paces calls per backend; ``SingleFlight`` collapses
concurrent identical requests into one backend call.
"""

from __future__ import annotations

import asyncio
import time
from collections.abc import Awaitable, Callable


class AsyncTokenBucket:
    """Token bucket where each caller reserves its slot before sleeping.

    Reserving first means concurrent callers queue up behind each other
    instead of all waking at the same refill instant.

    Args:
        rate: Tokens added per second
        burst: Bucket capacity
        clock: Monotonic time source in seconds
    """

    def __init__(
        self,
        rate: float,
        burst: float = 1.0,
        *,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        if rate <= 0:
            msg = f"rate must be positive, got {rate}"
            raise ValueError(msg)
        self._rate = rate
        self._burst = burst
        self._clock = clock
        self._tokens = burst
        self._last = clock()

    @property
    def rate(self) -> float:
        return self._rate

    def reserve(self) -> float:
        """Take one token and return how long the caller must wait for it."""
        now = self._clock()
        self._tokens = min(self._burst, self._tokens + (now - self._last) * self._rate)
        self._last = now
        self._tokens -= 1.0
        return max(0.0, -self._tokens / self._rate)

    async def acquire(self) -> None:
        """Wait until the caller may issue one request."""
        delay = self.reserve()
        if delay > 0:
            await asyncio.sleep(delay)


class SingleFlight[T]:
    """Run at most one in-flight call per key; followers share its outcome."""

    def __init__(self) -> None:
        self._inflight: dict[str, asyncio.Future[T]] = {}
        self.joins = 0

    def in_flight(self, key: str) -> bool:
        return key in self._inflight

    async def do(self, key: str, fn: Callable[[], Awaitable[T]]) -> tuple[T, bool]:
        """Run ``fn`` unless a call for ``key`` is already running.

        Returns:
            The value and whether it was shared from another caller's flight
        """
        existing = self._inflight.get(key)
        if existing is not None:
            self.joins += 1
            return await asyncio.shield(existing), True

        future: asyncio.Future[T] = asyncio.get_running_loop().create_future()
        self._inflight[key] = future
        try:
            value = await fn()
        except asyncio.CancelledError:
            future.cancel()
            raise
        except Exception as e:
            future.set_exception(e)
            # mark retrieved; followers (if any) still receive it
            future.exception()
            raise
        else:
            future.set_result(value)
            return value, False
        finally:
            del self._inflight[key]
