"""Group-relative policy optimization: advantages, loss masks and the objective.

Nothing here updates weights. Groups of scored rollouts are turned into
token-level batches (ids, loss mask, old/reference log-probabilities,
advantages) that an external trainer consumes; ``grpo_objective`` and
``grpo_gradient`` are the reference computation of what that trainer optimizes.

Conventions recorded in every exported batch:
    * advantages use the population standard deviation; groups whose
      reward std is below ``ZERO_VARIANCE_EPS`` get all-zero advantages
    * the KL term is the per-token k3 estimator exp(ref - new) - (ref - new) - 1
    * the objective is the masked-token mean per group, then the mean over groups
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from loguru import logger
from numpy.typing import NDArray

from src.core.domain.config import GrpoConfig
from src.core.domain.exceptions import AlignmentError, SpanMismatchError
from src.core.domain.models import (
    ChatMessage,
    MultimodalQuery,
    RewardBreakdown,
    Trajectory,
)
from src.core.domain.training import (
    GroupBatch,
    LogprobSource,
    SegmentSpan,
    TokenizedTrajectory,
)
from src.core.ports.outgoing.clients import Tokenizer
from src.core.usecases.transcript import render_context, render_transcript

ZERO_VARIANCE_EPS = 1e-8
KL_ESTIMATOR = "k3"
AGGREGATION = "masked_token_mean_per_group_then_mean_over_groups"
STD_CONVENTION = "population"

FloatArray = NDArray[np.float64]


def compute_advantages(rewards: Sequence[float]) -> list[float]:
    """Z-normalize rewards within a group (population std, zero-variance guard)."""
    if not rewards:
        msg = "a group needs at least one reward"
        raise ValueError(msg)
    r = np.asarray(rewards, dtype=np.float64)
    std = float(r.std())
    if std < ZERO_VARIANCE_EPS:
        return [0.0] * len(rewards)
    return ((r - r.mean()) / std).tolist()


def kl_k3(logprob_new: FloatArray, logprob_ref: FloatArray) -> FloatArray:
    """Per-token k3 estimate of KL(new || ref); always non-negative."""
    d = logprob_ref - logprob_new
    return np.exp(d) - d - 1.0


def _step_index(message_index: int) -> int:
    # messages 0 and 1 are the system prompt and the question
    return -1 if message_index < 2 else (message_index - 2) // 2


def full_context(
    t: Trajectory,
    query: MultimodalQuery,
    *,
    system_prompt: str,
    attach_result_image: bool = True,
) -> list[ChatMessage]:
    """Every message of a finished rollout, trailing failed turns included."""
    n = len(t.steps)
    messages = render_context(
        query,
        t.steps,
        t.raw_turns[:n],
        system_prompt=system_prompt,
        attach_result_image=attach_result_image,
    )
    messages.extend(
        ChatMessage(role="assistant", content=raw) for raw in t.raw_turns[n:]
    )
    return messages


def build_loss_mask(
    t: Trajectory,
    query: MultimodalQuery,
    tokenizer: Tokenizer,
    *,
    system_prompt: str,
    attach_result_image: bool = True,
) -> TokenizedTrajectory:
    """Tokenize the full rollout context, masking everything the policy did not write.

    Segments are tokenized one at a time so every token belongs to exactly
    one segment. Old log-probabilities come from the policy's report for a
    turn when its length matches the turn's tokens, and are zero otherwise;
    ``logprob_source`` tells the trainer which case applies. The reference
    log-probabilities equal the old ones.

    Raises:
        SpanMismatchError: If the segments do not tile the rendered text
    """
    messages = full_context(
        t, query, system_prompt=system_prompt, attach_result_image=attach_result_image
    )
    transcript = render_transcript(messages)

    cursor = 0
    for segment in transcript.segments:
        if segment.start != cursor:
            msg = f"segment at {segment.start} leaves a gap or overlap at {cursor}"
            raise SpanMismatchError(msg)
        cursor = segment.end
    if cursor != len(transcript.text):
        msg = f"segments cover {cursor} of {len(transcript.text)} characters"
        raise SpanMismatchError(msg)

    token_ids: list[int] = []
    loss_mask: list[bool] = []
    logprob_old: list[float] = []
    spans: list[SegmentSpan] = []
    assistant_turn = 0
    sources: set[LogprobSource] = set()
    for segment in transcript.segments:
        ids = tokenizer.encode(transcript.text[segment.start : segment.end])
        span = SegmentSpan(
            role=segment.role,
            is_header=segment.is_header,
            step_index=_step_index(segment.message_index),
            char_start=segment.start,
            char_end=segment.end,
            token_start=len(token_ids),
            token_end=len(token_ids) + len(ids),
        )
        spans.append(span)
        token_ids.extend(ids)
        loss_mask.extend([span.is_policy_generated] * len(ids))
        if span.is_policy_generated:
            values, source = _turn_logprobs(t, assistant_turn, len(ids))
            logprob_old.extend(values)
            sources.add(source)
            assistant_turn += 1
        else:
            logprob_old.extend([0.0] * len(ids))

    return TokenizedTrajectory(
        query_id=t.query_id,
        sample_index=t.sample_index,
        token_ids=tuple(token_ids),
        loss_mask=tuple(loss_mask),
        logprob_old=tuple(logprob_old),
        logprob_ref=tuple(logprob_old),
        span_map=tuple(spans),
        logprob_source=_overall_source(sources),
    )


def _turn_logprobs(
    t: Trajectory, turn: int, n_tokens: int
) -> tuple[list[float], LogprobSource]:
    reported = t.turn_logprobs[turn] if turn < len(t.turn_logprobs) else None
    if reported is None:
        return [0.0] * n_tokens, LogprobSource.MISSING
    if len(reported) == n_tokens:
        return list(reported), LogprobSource.POLICY
    logger.warning(
        "GrpoExport: turn {} of {}#{} has {} logprobs for {} tokens, "
        "exporting zeros flagged as misaligned",
        turn,
        t.query_id,
        t.sample_index,
        len(reported),
        n_tokens,
    )
    return [0.0] * n_tokens, LogprobSource.MISALIGNED


def _overall_source(sources: set[LogprobSource]) -> LogprobSource:
    if LogprobSource.MISALIGNED in sources:
        return LogprobSource.MISALIGNED
    if sources == {LogprobSource.POLICY}:
        return LogprobSource.POLICY
    return LogprobSource.MISSING


def _member_arrays(
    member: TokenizedTrajectory, logprob_new: Sequence[float]
) -> tuple[FloatArray, FloatArray, FloatArray, NDArray[np.bool_]]:
    new = np.asarray(logprob_new, dtype=np.float64)
    if new.shape != (len(member.token_ids),):
        msg = (
            f"{member.query_id}#{member.sample_index}: {new.size} new logprobs "
            f"for {len(member.token_ids)} tokens"
        )
        raise AlignmentError(msg)
    old = np.asarray(member.logprob_old, dtype=np.float64)
    ref = np.asarray(member.logprob_ref, dtype=np.float64)
    mask = np.asarray(member.loss_mask, dtype=bool)
    return new, old, ref, mask


def grpo_objective(
    batch: GroupBatch, logprob_new: Sequence[Sequence[float]]
) -> tuple[float, list[FloatArray]]:
    """Clipped surrogate minus the KL penalty, averaged over masked tokens.

    Returns:
        The group objective and the per-token terms of every member
        (exactly zero where the loss mask is false)

    Raises:
        AlignmentError: If ``logprob_new`` does not match the token sequences
    """
    if len(logprob_new) != len(batch.members):
        msg = f"{len(logprob_new)} logprob sequences for {len(batch.members)} members"
        raise AlignmentError(msg)
    eps, beta = batch.clip_epsilon, batch.kl_beta
    per_token: list[FloatArray] = []
    total, count = 0.0, 0
    with np.errstate(over="ignore", invalid="ignore"):
        for member, advantage, new_lp in zip(
            batch.members, batch.advantages, logprob_new, strict=True
        ):
            new, old, ref, mask = _member_arrays(member, new_lp)
            ratio = np.exp(new - old)
            surrogate = np.minimum(
                ratio * advantage, np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage
            )
            terms = np.where(mask, surrogate - beta * kl_k3(new, ref), 0.0)
            per_token.append(terms)
            total += float(terms[mask].sum())
            count += int(mask.sum())
    return (total / count if count else 0.0), per_token


def grpo_gradient(
    batch: GroupBatch, logprob_new: Sequence[Sequence[float]]
) -> list[FloatArray]:
    """Derivative of ``grpo_objective`` with respect to each new log-probability."""
    eps, beta = batch.clip_epsilon, batch.kl_beta
    grads: list[FloatArray] = []
    count = sum(sum(member.loss_mask) for member in batch.members)
    for member, advantage, new_lp in zip(
        batch.members, batch.advantages, logprob_new, strict=True
    ):
        new, old, ref, mask = _member_arrays(member, new_lp)
        ratio = np.exp(new - old)
        unclipped = ratio * advantage
        clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage
        inside = (ratio > 1.0 - eps) & (ratio < 1.0 + eps)
        through_clip = np.where(inside, ratio * advantage, 0.0)
        d_surrogate = np.where(unclipped <= clipped, ratio * advantage, through_clip)
        d_kl = 1.0 - np.exp(ref - new)
        grad = np.where(mask, d_surrogate - beta * d_kl, 0.0)
        grads.append(grad / count if count else grad)
    return grads


def mean_objective(
    batches: Sequence[GroupBatch], logprob_new: Sequence[Sequence[Sequence[float]]]
) -> float:
    """Mean of the per-group objectives."""
    if not batches:
        return 0.0
    pairs = zip(batches, logprob_new, strict=True)
    values = [grpo_objective(b, lp)[0] for b, lp in pairs]
    return float(np.mean(values))


@dataclass(frozen=True)
class GroupSummary:
    """Training-dynamics statistics of one group."""

    query_id: str
    size: int
    excluded: int
    mean_reward: float
    reward_std: float
    mean_turns: float


class TrainingExportService:
    """Turns scored rollout groups into ``GroupBatch`` records.

    Rollouts that ended in a tool failure are the environment's fault and
    are dropped from their group before advantages are computed.

    Args:
        tokenizer: Trainer tokenizer
        config: Objective hyperparameters stamped on each batch
        system_prompt: Rollout system prompt used when the rollouts ran
        attach_result_image: Whether result images were attached during rollout
    """

    def __init__(
        self,
        tokenizer: Tokenizer,
        config: GrpoConfig,
        *,
        system_prompt: str,
        attach_result_image: bool = True,
    ) -> None:
        self.tokenizer = tokenizer
        self.config = config
        self.system_prompt = system_prompt
        self.attach_result_image = attach_result_image

    def build_group(
        self,
        query: MultimodalQuery,
        trajectories: Sequence[Trajectory],
        rewards: Sequence[RewardBreakdown | None],
    ) -> tuple[GroupBatch | None, GroupSummary]:
        """Build one batch; ``None`` when every rollout was excluded."""
        kept = [
            (t, r)
            for t, r in zip(trajectories, rewards, strict=True)
            if r is not None and not t.is_environment_fault
        ]
        totals = [r.total for _, r in kept]
        summary = GroupSummary(
            query_id=query.id,
            size=len(kept),
            excluded=len(trajectories) - len(kept),
            mean_reward=float(np.mean(totals)) if totals else 0.0,
            reward_std=float(np.std(totals)) if totals else 0.0,
            mean_turns=(
                float(np.mean([len(t.raw_turns) for t, _ in kept])) if kept else 0.0
            ),
        )
        if not kept:
            logger.warning("GrpoExport: group {} has no usable rollouts", query.id)
            return None, summary

        members = tuple(
            build_loss_mask(
                t,
                query,
                self.tokenizer,
                system_prompt=self.system_prompt,
                attach_result_image=self.attach_result_image,
            )
            for t, _ in kept
        )
        batch = GroupBatch(
            query_id=query.id,
            members=members,
            rewards=tuple(totals),
            advantages=tuple(compute_advantages(totals)),
            clip_epsilon=self.config.clip_epsilon,
            kl_beta=self.config.kl_beta,
        )
        return batch, summary

    def build_groups(
        self,
        trajectories: Sequence[Trajectory],
        rewards: Sequence[RewardBreakdown | None],
        queries: Mapping[str, MultimodalQuery],
    ) -> tuple[list[GroupBatch], list[GroupSummary]]:
        """Group trajectories by query (in first-seen order) and build batches.

        Raises:
            KeyError: If a trajectory references an unknown query
        """
        grouped: dict[str, list[tuple[Trajectory, RewardBreakdown | None]]] = {}
        for t, r in zip(trajectories, rewards, strict=True):
            grouped.setdefault(t.query_id, []).append((t, r))

        batches: list[GroupBatch] = []
        summaries: list[GroupSummary] = []
        for query_id, pairs in grouped.items():
            pairs.sort(key=lambda pair: pair[0].sample_index)
            batch, summary = self.build_group(
                queries[query_id], [t for t, _ in pairs], [r for _, r in pairs]
            )
            summaries.append(summary)
            if batch is not None:
                batches.append(batch)
        return batches, summaries
