"""Structural validation of trajectories.

``validate_trajectory`` is total: it never raises and returns the list of
violated invariants, each with a machine-readable code. The format reward
builds on it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from src.core.domain.models import (
    AnswerExpert,
    AnswerResult,
    ImageResult,
    ImageSearch,
    Termination,
    TextResult,
    TextSearch,
    Trajectory,
)


class ViolationCode(Enum):
    """Machine-readable trajectory violations."""

    EMPTY_TRAJECTORY = "EMPTY_TRAJECTORY"
    NO_TERMINAL_EXPERT = "NO_TERMINAL_EXPERT"
    EXPERT_NOT_TERMINAL = "EXPERT_NOT_TERMINAL"
    EMPTY_REASONING = "EMPTY_REASONING"
    MALFORMED_TOOL_ARGS = "MALFORMED_TOOL_ARGS"
    RESPONSE_MISMATCH = "RESPONSE_MISMATCH"
    RAW_TURN_MISMATCH = "RAW_TURN_MISMATCH"
    TERMINATION_MISMATCH = "TERMINATION_MISMATCH"


@dataclass(frozen=True)
class Violation:
    """One violated invariant, located at a step when applicable."""

    code: ViolationCode
    step_index: int | None = None
    detail: str = ""


_EXPECTED_RESPONSE = {
    ImageSearch: ImageResult,
    TextSearch: TextResult,
    AnswerExpert: AnswerResult,
}


def validate_trajectory(t: Trajectory) -> list[Violation]:
    """Check the structural invariants of a trajectory.

    Args:
        t: Trajectory to check

    Returns:
        Violations found; empty iff every invariant holds
    """
    if not t.steps:
        return [Violation(ViolationCode.EMPTY_TRAJECTORY)]

    violations: list[Violation] = []
    last = len(t.steps) - 1
    for i, step in enumerate(t.steps):
        call = step.tool_call
        if not step.reasoning.strip():
            violations.append(Violation(ViolationCode.EMPTY_REASONING, i))
        if isinstance(call, TextSearch) and not call.query.strip():
            violations.append(
                Violation(ViolationCode.MALFORMED_TOOL_ARGS, i, "empty text query")
            )
        if isinstance(call, ImageSearch) and call.image is None:
            violations.append(
                Violation(ViolationCode.MALFORMED_TOOL_ARGS, i, "unbound image")
            )
        expected = _EXPECTED_RESPONSE[type(call)]
        if not isinstance(step.tool_response, expected):
            violations.append(
                Violation(
                    ViolationCode.RESPONSE_MISMATCH,
                    i,
                    f"{call.kind} answered by {step.tool_response.kind}",
                )
            )
        if isinstance(call, AnswerExpert) and i != last:
            violations.append(Violation(ViolationCode.EXPERT_NOT_TERMINAL, i))

    ends_with_expert = isinstance(t.steps[-1].tool_call, AnswerExpert)
    if not ends_with_expert:
        violations.append(Violation(ViolationCode.NO_TERMINAL_EXPERT, last))
    elif t.terminated is not None and t.terminated is not Termination.ANSWERED:
        violations.append(
            Violation(
                ViolationCode.TERMINATION_MISMATCH,
                last,
                f"ends with answer_expert but terminated={t.terminated.value}",
            )
        )

    if len(t.raw_turns) != len(t.steps):
        violations.append(
            Violation(
                ViolationCode.RAW_TURN_MISMATCH,
                None,
                f"{len(t.raw_turns)} raw turns for {len(t.steps)} steps",
            )
        )
    return violations
