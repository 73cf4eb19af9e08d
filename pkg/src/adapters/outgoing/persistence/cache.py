"""Content-addressed on-disk tool cache.

Layout: ``<root>/<key[:2]>/<key>.json``. Each file holds the write timestamp
on its first line followed by the canonical response JSON. Writes go to a
temporary file in the same directory and are renamed into place, so readers
never see partial entries and concurrent writers of one key cannot corrupt it.
"""

from __future__ import annotations

import os
import tempfile
import time
from collections.abc import Callable, Iterator
from pathlib import Path

from loguru import logger

from src.core.ports.outgoing.repositories import CacheEntry, CacheStats


class FileToolCache:
    """ToolCache backed by a directory tree.

    Args:
        root: Cache directory (created on demand)
        clock: Wall-clock time source in seconds
    """

    def __init__(self, root: Path, *, clock: Callable[[], float] = time.time) -> None:
        self.root = Path(root)
        self._clock = clock
        self._hits = 0
        self._misses = 0
        self._writes = 0

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def _read(self, path: Path) -> CacheEntry | None:
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            return None
        header, _, value = raw.partition(b"\n")
        try:
            created_at = float(header)
        except ValueError:
            logger.warning("ToolCache: corrupt entry {}, ignoring", path.name)
            return None
        return CacheEntry(key=path.stem, value=value, created_at=created_at)

    def get(self, key: str, max_age_s: float | None = None) -> CacheEntry | None:
        entry = self._read(self._path(key))
        if entry is not None and max_age_s is not None:
            if self._clock() - entry.created_at > max_age_s:
                logger.debug("ToolCache: expired {}", key[:12])
                entry = None
        if entry is None:
            self._misses += 1
        else:
            self._hits += 1
        return entry

    def put(self, key: str, value: bytes) -> CacheEntry:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        created_at = self._clock()
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(repr(created_at).encode("ascii") + b"\n" + value)
            os.replace(tmp_name, path)
        except BaseException:
            Path(tmp_name).unlink(missing_ok=True)
            raise
        self._writes += 1
        logger.debug("ToolCache: stored {} ({} bytes)", key[:12], len(value))
        return CacheEntry(key=key, value=value, created_at=created_at)

    def _entries(self) -> Iterator[Path]:
        if not self.root.exists():
            return iter(())
        paths = self.root.glob("??/*.json")
        return (p for p in paths if not p.name.startswith(".tmp-"))

    def stats(self) -> CacheStats:
        return CacheStats(
            entries=sum(1 for _ in self._entries()),
            hits=self._hits,
            misses=self._misses,
            writes=self._writes,
        )

    def clear(self, older_than_s: float | None = None) -> int:
        now = self._clock()
        removed = 0
        for path in list(self._entries()):
            if older_than_s is not None:
                entry = self._read(path)
                if entry is not None and now - entry.created_at <= older_than_s:
                    continue
            path.unlink(missing_ok=True)
            removed += 1
        logger.info("ToolCache: removed {} entries from {}", removed, self.root)
        return removed
