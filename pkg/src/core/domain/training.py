"""Token-level training artifacts handed to an external policy optimizer."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from src.core.domain.exceptions import AlignmentError


class LogprobSource(Enum):
    """Where the old log-probabilities of a tokenized rollout came from."""

    POLICY = "policy"
    MISSING = "missing"
    MISALIGNED = "misaligned"


@dataclass(frozen=True)
class SegmentSpan:
    """Where one transcript segment lives in characters and in tokens.

    Args:
        role: Message role the segment belongs to
        is_header: Role marker rather than message content
        step_index: Trajectory step the segment belongs to (-1 for the prompt)
        char_start: First character offset
        char_end: One past the last character
        token_start: First token index
        token_end: One past the last token
    """

    role: str
    is_header: bool
    step_index: int
    char_start: int
    char_end: int
    token_start: int
    token_end: int

    @property
    def is_policy_generated(self) -> bool:
        """Assistant content is the only text the policy produced."""
        return self.role == "assistant" and not self.is_header


@dataclass(frozen=True)
class TokenizedTrajectory:
    """Token ids with loss mask and log-probabilities, all aligned.

    ``logprob_source`` is ``POLICY`` only when every assistant turn came with
    log-probabilities matching its tokens; otherwise the old log-probabilities
    are zeros and the trainer has to recompute them.

    Raises:
        AlignmentError: If the per-token sequences differ in length
    """

    query_id: str
    sample_index: int
    token_ids: tuple[int, ...]
    loss_mask: tuple[bool, ...]
    logprob_old: tuple[float, ...]
    logprob_ref: tuple[float, ...]
    span_map: tuple[SegmentSpan, ...] = ()
    logprob_source: LogprobSource = LogprobSource.MISSING

    def __post_init__(self) -> None:
        """Check that every per-token sequence has the same length."""
        lengths = {
            len(self.token_ids),
            len(self.loss_mask),
            len(self.logprob_old),
            len(self.logprob_ref),
        }
        if len(lengths) != 1:
            msg = (
                f"Per-token sequences differ in length: ids={len(self.token_ids)}, "
                f"mask={len(self.loss_mask)}, old={len(self.logprob_old)}, "
                f"ref={len(self.logprob_ref)}"
            )
            raise AlignmentError(msg)

    @property
    def num_policy_tokens(self) -> int:
        """Number of tokens that receive gradient."""
        return sum(self.loss_mask)


@dataclass(frozen=True)
class GroupBatch:
    """G tokenized rollouts of one query with rewards and normalized advantages."""

    query_id: str
    members: tuple[TokenizedTrajectory, ...]
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    clip_epsilon: float
    kl_beta: float

    def __post_init__(self) -> None:
        """Rewards and advantages need one entry per member."""
        if not len(self.members) == len(self.rewards) == len(self.advantages):
            msg = (
                f"Group {self.query_id}: {len(self.members)} members, "
                f"{len(self.rewards)} rewards, {len(self.advantages)} advantages"
            )
            raise AlignmentError(msg)
