"""GRPO batch files for the external trainer.

The first line is a header record naming the schema version and the
conventions the objective was defined with; each following line is one
``GroupBatch``. Per-group training summaries go to a separate JSON Lines file.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import asdict
from pathlib import Path
from typing import Any

from loguru import logger
from pydantic import ValidationError

from src.adapters.outgoing.persistence.jsonl import dumps, read_jsonl, write_lines
from src.core.domain.codec import group_from_dict, group_to_dict
from src.core.domain.exceptions import AlignmentError, BatchFormatError
from src.core.domain.training import GroupBatch
from src.core.usecases.grpo import (
    AGGREGATION,
    KL_ESTIMATOR,
    STD_CONVENTION,
    ZERO_VARIANCE_EPS,
    GroupSummary,
)

SCHEMA_VERSION = 1


def batch_header(*, tokenizer: str, num_groups: int) -> dict[str, Any]:
    """Header record written before the groups."""
    return {
        "record": "header",
        "schema_version": SCHEMA_VERSION,
        "kl_estimator": KL_ESTIMATOR,
        "aggregation": AGGREGATION,
        "advantage_std": STD_CONVENTION,
        "zero_variance_eps": ZERO_VARIANCE_EPS,
        "tokenizer": tokenizer,
        "num_groups": num_groups,
    }


def export_batches(path: Path, groups: Sequence[GroupBatch], *, tokenizer: str) -> int:
    """Write the header and one line per group.

    Returns:
        Number of groups written
    """
    header = batch_header(tokenizer=tokenizer, num_groups=len(groups))
    lines = [dumps(header)]
    lines.extend(dumps({"record": "group", **group_to_dict(g)}) for g in groups)
    write_lines(path, lines)
    logger.info("Batches: exported {} groups to {}", len(groups), path)
    return len(groups)


def load_batches(path: Path) -> tuple[dict[str, Any], list[GroupBatch]]:
    """Read a batch file back.

    Returns:
        The header record and the groups in file order

    Raises:
        BatchFormatError: On a missing or unsupported header, a group count
            that disagrees with the header, or a malformed group record
    """
    try:
        records = list(read_jsonl(path))
    except ValueError as e:
        raise BatchFormatError(str(e)) from e
    if not records or records[0].get("record") != "header":
        raise BatchFormatError(f"{path}: missing header record")
    header = records[0]
    if header.get("schema_version") != SCHEMA_VERSION:
        msg = f"{path}: unsupported schema_version {header.get('schema_version')!r}"
        raise BatchFormatError(msg)

    groups: list[GroupBatch] = []
    for number, record in enumerate(records[1:], start=2):
        if record.pop("record", None) != "group":
            raise BatchFormatError(f"{path}:{number}: expected a group record")
        try:
            groups.append(group_from_dict(record))
        except (ValidationError, ValueError, AlignmentError) as e:
            raise BatchFormatError(f"{path}:{number}: {e}") from e
    if header.get("num_groups") != len(groups):
        announced = header.get("num_groups")
        msg = f"{path}: header announces {announced} groups, found {len(groups)}"
        raise BatchFormatError(msg)
    return header, groups


def write_summaries(path: Path, summaries: Sequence[GroupSummary]) -> int:
    """Per-group mean reward, reward std and mean turn count."""
    return write_lines(path, (dumps(asdict(s)) for s in summaries))


def load_summaries(path: Path) -> list[GroupSummary]:
    return [GroupSummary(**obj) for obj in read_jsonl(path)]

