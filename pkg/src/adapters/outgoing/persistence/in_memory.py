"""In-memory tool cache for development and testing."""

import time
from collections.abc import Callable

from loguru import logger

from src.core.ports.outgoing.repositories import CacheEntry, CacheStats


class InMemoryToolCache:
    """In-memory implementation of ToolCache.

    Stores entries in a dictionary; nothing survives the process.
    """

    def __init__(self, *, clock: Callable[[], float] = time.time) -> None:
        self._entries: dict[str, CacheEntry] = {}
        self._clock = clock
        self._hits = 0
        self._misses = 0
        self._writes = 0

    def get(self, key: str, max_age_s: float | None = None) -> CacheEntry | None:
        """Find an entry by key.

        Args:
            key: Cache key
            max_age_s: Treat older entries as missing

        Returns:
            The entry if present and fresh, None otherwise
        """
        entry = self._entries.get(key)
        if entry is not None and max_age_s is not None:
            if self._clock() - entry.created_at > max_age_s:
                entry = None
        if entry is None:
            self._misses += 1
            logger.debug("InMemoryCache: miss {}", key[:12])
        else:
            self._hits += 1
        return entry

    def put(self, key: str, value: bytes) -> CacheEntry:
        """Store a value, replacing any previous entry."""
        entry = CacheEntry(key=key, value=value, created_at=self._clock())
        self._entries[key] = entry
        self._writes += 1
        return entry

    def stats(self) -> CacheStats:
        """Return entry and hit/miss counters."""
        return CacheStats(
            entries=len(self._entries),
            hits=self._hits,
            misses=self._misses,
            writes=self._writes,
        )

    def clear(self, older_than_s: float | None = None) -> int:
        """Delete all entries, or only those older than ``older_than_s``."""
        now = self._clock()
        doomed = [
            key
            for key, entry in self._entries.items()
            if older_than_s is None or now - entry.created_at > older_than_s
        ]
        for key in doomed:
            del self._entries[key]
        return len(doomed)
