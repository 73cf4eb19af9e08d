"""Outgoing port interfaces for persistence.

The tool cache stores canonical tool responses keyed by a digest of the
normalized request. Adapters: a content-addressed directory on disk and an
in-memory dictionary for tests.
"""

from dataclasses import dataclass
from typing import Protocol


@dataclass(frozen=True)
class CacheEntry:
    """A cached tool response.

    Args:
        key: Hex digest of (tool kind, normalized request)
        value: Canonical JSON of the tool response
        created_at: Unix timestamp of the write
    """

    key: str
    value: bytes
    created_at: float


@dataclass(frozen=True)
class CacheStats:
    """Counters reported in run manifests."""

    entries: int
    hits: int
    misses: int
    writes: int


class ToolCache(Protocol):
    """Repository interface for cached tool responses."""

    def get(self, key: str, max_age_s: float | None = None) -> CacheEntry | None:
        """Find an entry by key.

        Args:
            key: Cache key
            max_age_s: Treat entries older than this as missing (None = no TTL)

        Returns:
            The entry if present and fresh, None otherwise
        """
        ...

    def put(self, key: str, value: bytes) -> CacheEntry:
        """Store a value atomically.

        Args:
            key: Cache key
            value: Canonical JSON bytes

        Returns:
            The stored entry
        """
        ...

    def stats(self) -> CacheStats:
        """Return entry and hit/miss counters."""
        ...

    def clear(self, older_than_s: float | None = None) -> int:
        """Delete entries (only those older than ``older_than_s`` when given).

        Returns:
            Number of deleted entries
        """
        ...
