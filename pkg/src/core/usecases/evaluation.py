"""Benchmark evaluation: judged accuracy, tool-usage statistics and retrieval scores.

Items whose rollout ended in a tool failure, or whose policy or judge call
raised, are reported as environment faults and kept out of the accuracy
denominator. Retrieval scores reuse the reward service's scorers.
"""

from __future__ import annotations

import asyncio
import math
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

from loguru import logger

from src.core.domain.config import EvalConfig
from src.core.domain.exceptions import DomainError
from src.core.domain.models import (
    AnswerExpert,
    ImageSearch,
    MultimodalQuery,
    TextSearch,
    ToolName,
    Trajectory,
)
from src.core.usecases.reward import TEXT_RETRIEVAL_WEIGHT, RewardService
from src.core.usecases.rollout import RolloutService

IMAGE_RETRIEVAL_MAX = 0.5


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval of a binomial proportion; (0, 0) when ``n`` is 0."""
    if n == 0:
        return 0.0, 0.0
    p = successes / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class Accuracy:
    """Judged accuracy of a set of items."""

    n: int
    correct: int
    accuracy: float
    ci_low: float
    ci_high: float

    @classmethod
    def of(cls, correct: int, n: int, z: float = 1.96) -> Accuracy:
        low, high = wilson_interval(correct, n, z)
        return cls(n, correct, correct / n if n else 0.0, low, high)


@dataclass(frozen=True)
class ItemResult:
    """Outcome of one evaluated item."""

    query_id: str
    difficulty: str
    hops: int
    terminated: str
    answer: str | None
    correct: bool
    environment_fault: bool
    failure_reason: str = ""


@dataclass(frozen=True)
class ToolUsage:
    """Tool invocation counts and the share of trajectories using each tool."""

    trajectories: int
    counts: dict[str, int]
    ratios: dict[str, float]
    turn_distribution: dict[int, int]
    mean_turns: float


def tool_usage_stats(trajectories: Sequence[Trajectory]) -> ToolUsage:
    """Count tool calls per tool.

    A tool's ratio is the share of trajectories calling it at least once.
    """
    kinds = {
        ImageSearch: ToolName.IMAGE_SEARCH,
        TextSearch: ToolName.TEXT_SEARCH,
        AnswerExpert: ToolName.ANSWER_EXPERT,
    }
    counts: Counter[str] = Counter()
    users: Counter[str] = Counter()
    turns: Counter[int] = Counter()
    for t in trajectories:
        used = set()
        for step in t.steps:
            name = kinds[type(step.tool_call)].value
            counts[name] += 1
            used.add(name)
        users.update(used)
        turns[len(t.steps)] += 1
    n = len(trajectories)
    names = [tool.value for tool in ToolName]
    return ToolUsage(
        trajectories=n,
        counts={name: counts[name] for name in names},
        ratios={name: users[name] / n if n else 0.0 for name in names},
        turn_distribution=dict(sorted(turns.items())),
        mean_turns=sum(k * v for k, v in turns.items()) / n if n else 0.0,
    )


@dataclass(frozen=True)
class RetrievalScores:
    """Mean retrieval scores rescaled to [0, 1]."""

    text: float
    image: float
    text_items: int
    image_items: int
    no_evidence: tuple[str, ...] = ()
    failed: tuple[str, ...] = ()


@dataclass
class EvalReport:
    """Everything ``evaluate`` measured, plus provenance."""

    method: str
    backbone: str
    dataset: str
    overall: Accuracy
    by_difficulty: dict[str, Accuracy]
    by_hops: dict[int, Accuracy]
    environment_faults: int
    tool_usage: ToolUsage
    retrieval: RetrievalScores | None
    items: list[ItemResult]
    fingerprint: Mapping[str, Any] = field(default_factory=dict)


class EvaluationService:
    """Runs one rollout per item and aggregates judged results.

    Args:
        rollouts: Rollout service bound to the agent under test
        rewards: Reward service providing the answer and retrieval judges
        config: Evaluation settings
    """

    def __init__(
        self, rollouts: RolloutService, rewards: RewardService, config: EvalConfig
    ) -> None:
        self.rollouts = rollouts
        self.rewards = rewards
        self.config = config

    async def run_items(
        self, dataset: Sequence[MultimodalQuery]
    ) -> tuple[list[Trajectory], list[ItemResult]]:
        """Roll out and judge every item, at most ``max_concurrency`` at once.

        An item whose rollout or answer judging raised is recorded as an
        environment fault with the error as its ``failure_reason``; items that
        never produced a rollout contribute no trajectory.

        Raises:
            DomainError: The first item's error, when no item produced a rollout
        """
        slots = asyncio.Semaphore(self.config.max_concurrency)

        async def one(
            query: MultimodalQuery,
        ) -> tuple[Trajectory | None, ItemResult, DomainError | None]:
            async with slots:
                t: Trajectory | None = None
                try:
                    t = await self.rollouts.run_rollout(query, 0)
                    return t, await self._judge_item(query, t), None
                except DomainError as e:
                    logger.error("Eval: item {} failed: {}", query.id, e)
                    terminated = "error"
                    if t is not None and t.terminated is not None:
                        terminated = t.terminated.value
                    return (
                        t,
                        ItemResult(
                            query_id=query.id,
                            difficulty=query.difficulty.value,
                            hops=len(query.evidence_hops),
                            terminated=terminated,
                            answer=t.final_answer if t is not None else None,
                            correct=False,
                            environment_fault=True,
                            failure_reason=f"{type(e).__name__}: {e}",
                        ),
                        e,
                    )

        outcomes = await asyncio.gather(*(one(q) for q in dataset))
        trajectories = [t for t, _, _ in outcomes if t is not None]
        errors = [e for _, _, e in outcomes if e is not None]
        if errors and not trajectories:
            raise errors[0]
        return trajectories, [item for _, item, _ in outcomes]

    async def _judge_item(self, query: MultimodalQuery, t: Trajectory) -> ItemResult:
        correct = False
        answer = t.final_answer
        if answer is not None:
            score = await self.rewards.score_answer(
                query.question, query.gold_candidates, answer
            )
            correct = score == 1.0
        return ItemResult(
            query_id=query.id,
            difficulty=query.difficulty.value,
            hops=len(query.evidence_hops),
            terminated=t.terminated.value if t.terminated else "running",
            answer=answer,
            correct=correct,
            environment_fault=t.is_environment_fault,
            failure_reason=t.failure_reason,
        )

    async def retrieval_scores(
        self, trajectories: Sequence[Trajectory], dataset: Mapping[str, MultimodalQuery]
    ) -> RetrievalScores:
        """Mean text and image retrieval scores over non-faulted trajectories.

        Items are scored concurrently under the ``max_concurrency`` cap; an
        item whose judging fails is listed in ``failed`` and left out of both
        means.
        """
        slots = asyncio.Semaphore(self.config.max_concurrency)

        async def one(t: Trajectory) -> tuple[float, float | None] | DomainError:
            query = dataset[t.query_id]
            async with slots:
                try:
                    image = await self.rewards.score_img_retrieval(t, query)
                    if not query.evidence_hops:
                        return image / IMAGE_RETRIEVAL_MAX, None
                    text = await self.rewards.score_text_retrieval(
                        t, query.evidence_hops
                    )
                except DomainError as e:
                    logger.error(
                        "Eval: retrieval judging failed for {}: {}", t.query_id, e
                    )
                    return e
            return image / IMAGE_RETRIEVAL_MAX, text / TEXT_RETRIEVAL_WEIGHT

        scored = [t for t in trajectories if not t.is_environment_fault]
        outcomes = await asyncio.gather(*(one(t) for t in scored))
        text_scores: list[float] = []
        image_scores: list[float] = []
        no_evidence: list[str] = []
        failed: list[str] = []
        for t, outcome in zip(scored, outcomes, strict=True):
            if isinstance(outcome, DomainError):
                failed.append(t.query_id)
                continue
            image, text = outcome
            image_scores.append(image)
            if text is None:
                no_evidence.append(t.query_id)
            else:
                text_scores.append(text)
        if no_evidence:
            logger.warning("Eval: {} items without evidence hops", len(no_evidence))
        return RetrievalScores(
            text=sum(text_scores) / len(text_scores) if text_scores else 0.0,
            image=sum(image_scores) / len(image_scores) if image_scores else 0.0,
            text_items=len(text_scores),
            image_items=len(image_scores),
            no_evidence=tuple(no_evidence),
            failed=tuple(failed),
        )

    async def evaluate(
        self,
        dataset: Sequence[MultimodalQuery],
        *,
        dataset_name: str = "",
        fingerprint: Mapping[str, Any] | None = None,
        with_retrieval: bool = True,
    ) -> tuple[EvalReport, list[Trajectory]]:
        """Evaluate the agent on ``dataset``."""
        trajectories, items = await self.run_items(dataset)
        z = self.config.confidence_z
        scored = [item for item in items if not item.environment_fault]

        def accuracy(group: Sequence[ItemResult]) -> Accuracy:
            return Accuracy.of(sum(item.correct for item in group), len(group), z)

        by_difficulty: dict[str, list[ItemResult]] = {}
        by_hops: dict[int, list[ItemResult]] = {}
        for item in scored:
            by_difficulty.setdefault(item.difficulty, []).append(item)
            by_hops.setdefault(item.hops, []).append(item)

        retrieval = None
        if with_retrieval:
            by_id = {q.id: q for q in dataset}
            retrieval = await self.retrieval_scores(trajectories, by_id)

        report = EvalReport(
            method=self.config.method_name,
            backbone=self.config.backbone,
            dataset=dataset_name,
            overall=accuracy(scored),
            by_difficulty={k: accuracy(v) for k, v in sorted(by_difficulty.items())},
            by_hops={k: accuracy(v) for k, v in sorted(by_hops.items())},
            environment_faults=len(items) - len(scored),
            tool_usage=tool_usage_stats(
                [t for t in trajectories if not t.is_environment_fault]
            ),
            retrieval=retrieval,
            items=items,
            fingerprint=dict(fingerprint or {}),
        )
        logger.info(
            "Eval: accuracy {:.1%} on {} items ({} environment faults)",
            report.overall.accuracy,
            report.overall.n,
            report.environment_faults,
        )
        return report, trajectories
