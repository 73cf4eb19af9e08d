"""Canonical JSON codecs for domain types.

pydantic ``TypeAdapter``s over the frozen dataclasses give one JSON object per
value with fields exactly as declared; the ``kind`` literal selects the
variant of each tagged union.
"""

from __future__ import annotations

from typing import Any

from pydantic import TypeAdapter

from src.core.domain.models import (
    MultimodalQuery,
    RewardBreakdown,
    ToolResponse,
    Trajectory,
)
from src.core.domain.training import GroupBatch

_RESPONSE = TypeAdapter[ToolResponse](ToolResponse)
_TRAJECTORY = TypeAdapter(Trajectory)
_QUERY = TypeAdapter(MultimodalQuery)
_REWARD = TypeAdapter(RewardBreakdown)
_GROUP = TypeAdapter(GroupBatch)


def encode_response(response: ToolResponse) -> bytes:
    """Serialize a tool response to canonical JSON bytes."""
    return _RESPONSE.dump_json(response)


def decode_response(data: bytes | str) -> ToolResponse:
    """Parse a tool response from JSON."""
    return _RESPONSE.validate_json(data)


def encode_trajectory(trajectory: Trajectory) -> str:
    """Serialize a trajectory to one line of JSON."""
    return _TRAJECTORY.dump_json(trajectory).decode("utf-8")


def decode_trajectory(data: bytes | str) -> Trajectory:
    """Parse a trajectory from JSON."""
    return _TRAJECTORY.validate_json(data)


def encode_query(query: MultimodalQuery) -> str:
    """Serialize a dataset item to one line of JSON."""
    return _QUERY.dump_json(query).decode("utf-8")


def decode_query(data: bytes | str) -> MultimodalQuery:
    """Parse a dataset item from JSON."""
    return _QUERY.validate_json(data)


def reward_to_dict(breakdown: RewardBreakdown, *, audit: bool) -> dict[str, Any]:
    """Plain-dict form of a reward; judge transcripts only when auditing."""
    data: dict[str, Any] = _REWARD.dump_python(breakdown, mode="json")
    if not audit:
        data.pop("judge_transcripts", None)
    return data


def reward_from_dict(data: dict[str, Any]) -> RewardBreakdown:
    """Rebuild a reward from its dict form."""
    return _REWARD.validate_python(data)


def group_to_dict(batch: GroupBatch) -> dict[str, Any]:
    """Plain-dict form of a training batch."""
    data: dict[str, Any] = _GROUP.dump_python(batch, mode="json")
    return data


def group_from_dict(data: dict[str, Any]) -> GroupBatch:
    """Rebuild a training batch from its dict form."""
    return _GROUP.validate_python(data)
