"""Run manifests written beside every command output.

A manifest records what is needed to replay a run exactly: the config
fingerprint, a digest of every input file, tool-cache counters and wall time.
"""

from __future__ import annotations

import hashlib
import time
from collections.abc import Callable, Mapping
from datetime import UTC, datetime
from importlib import metadata
from pathlib import Path
from typing import Any

from loguru import logger
from pydantic import BaseModel, Field

from src.core.ports.outgoing.repositories import CacheStats

_CHUNK = 1 << 20


def file_digest(path: Path) -> str:
    """SHA-256 of a file, or of a directory's files in sorted order."""
    h = hashlib.sha256()
    files = [path]
    if path.is_dir():
        files = sorted(p for p in path.rglob("*") if p.is_file())
    for file in files:
        if path.is_dir():
            h.update(str(file.relative_to(path)).encode("utf-8") + b"\x00")
        with file.open("rb") as f:
            while chunk := f.read(_CHUNK):
                h.update(chunk)
    return h.hexdigest()


def package_version() -> str:
    try:
        return metadata.version("mm-search-agent")
    except metadata.PackageNotFoundError:
        return "0+unknown"


class RunManifest(BaseModel):
    """Provenance of one command invocation."""

    command: str
    version: str = Field(default_factory=package_version)
    started_at: str
    wall_time_s: float
    config_fingerprint: str
    inputs: dict[str, str] = Field(default_factory=dict)
    outputs: dict[str, str] = Field(default_factory=dict)
    cache: dict[str, int] | None = None
    counters: dict[str, Any] = Field(default_factory=dict)


class ManifestRecorder:
    """Collects timing and digests while a command runs.

    Args:
        command: Subcommand name
        fingerprint: Run-config fingerprint
        clock: Monotonic time source
    """

    def __init__(
        self,
        command: str,
        fingerprint: str,
        *,
        clock: Callable[[], float] = time.perf_counter,
    ) -> None:
        self.command = command
        self.fingerprint = fingerprint
        self._clock = clock
        self._start = clock()
        self._started_at = datetime.now(UTC).isoformat()
        self.inputs: dict[str, str] = {}

    def add_inputs(self, inputs: Mapping[str, Path | None]) -> None:
        for name, path in inputs.items():
            if path is not None:
                self.inputs[name] = file_digest(path)

    def write(
        self,
        out: Path,
        *,
        cache: CacheStats | None = None,
        counters: Mapping[str, Any] | None = None,
    ) -> Path:
        """Write ``<out>.manifest.json`` and return its path."""
        manifest = RunManifest(
            command=self.command,
            started_at=self._started_at,
            wall_time_s=round(self._clock() - self._start, 6),
            config_fingerprint=self.fingerprint,
            inputs=self.inputs,
            outputs={out.name: file_digest(out)} if out.exists() else {},
            cache=(
                {
                    "entries": cache.entries,
                    "hits": cache.hits,
                    "misses": cache.misses,
                    "writes": cache.writes,
                }
                if cache is not None
                else None
            ),
            counters=dict(counters or {}),
        )
        path = out.with_name(out.name + ".manifest.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.info("Manifest: {} written to {}", self.command, path)
        return path
