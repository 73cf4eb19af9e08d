"""Multi-objective reward: format, answer, image retrieval and text retrieval.

A trajectory that breaks the tool-call protocol gets an absolute -1 and no
judge is consulted. Otherwise the total is the sum of the answer reward
(0 or 1), the image-recognition reward (0, 0.25 or 0.5) and the
text-retrieval reward (0.5 times the share of evidence hops supported).
"""

from __future__ import annotations

import asyncio
from collections.abc import Sequence
from dataclasses import dataclass, field

from loguru import logger

from src.core.domain.config import JudgeConfig, RewardConfig
from src.core.domain.exceptions import (
    JudgeUnparseableError,
    NoEvidenceError,
    ParseFailure,
)
from src.core.domain.models import (
    AnswerResult,
    EvidenceHop,
    ImageResult,
    JudgeTranscript,
    MultimodalQuery,
    RewardBreakdown,
    Termination,
    TextResult,
    Trajectory,
)
from src.core.domain.validation import validate_trajectory
from src.core.ports.outgoing.clients import JudgeClient
from src.core.usecases.prompts import format_answer_judge, judge_rubric, parse_verdict
from src.core.usecases.rollout import parse_turn
from src.core.usecases.throttling import AsyncTokenBucket

IMAGE_VERDICT_SCORES = {"correct": 0.5, "cautious": 0.25, "incorrect": 0.0}
BINARY_VERDICT_SCORES = {"yes": 1.0, "no": 0.0}
TEXT_RETRIEVAL_WEIGHT = 0.5


def score_format(t: Trajectory) -> float:
    """0 for a well-formed answered trajectory, -1 otherwise."""
    if t.terminated is not Termination.ANSWERED or validate_trajectory(t):
        return -1.0
    for raw in t.raw_turns:
        try:
            parse_turn(raw)
        except ParseFailure:
            return -1.0
    return 0.0


def evidence_text(t: Trajectory) -> str:
    """Everything the agent reasoned about or retrieved, answer excluded."""
    parts: list[str] = []
    for step in t.steps:
        if step.reasoning:
            parts.append(step.reasoning)
        match step.tool_response:
            case ImageResult(titles=titles):
                parts.extend(page.title for page in titles)
            case TextResult(chunks=chunks):
                parts.extend(chunk.text for chunk in chunks)
            case AnswerResult():
                pass
    return "\n".join(parts)


def all_reasoning(t: Trajectory) -> str:
    """Reasoning blocks of every step, in order."""
    return "\n".join(step.reasoning for step in t.steps)


@dataclass
class _Verdicts:
    transcripts: list[JudgeTranscript] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)


class RewardService:
    """Scores trajectories with LLM-as-judge components.

    Args:
        judge: Judge client shared by every component
        judge_config: Retry budget and rubric version
        reward_config: Component switches
        limiter: Rate limiter shared with the tool environment
    """

    def __init__(
        self,
        judge: JudgeClient,
        judge_config: JudgeConfig,
        reward_config: RewardConfig | None = None,
        *,
        limiter: AsyncTokenBucket | None = None,
    ) -> None:
        self.judge = judge
        self.judge_config = judge_config
        self.reward_config = reward_config or RewardConfig()
        self.rubric = judge_rubric(judge_config.rubric_version)
        self._limiter = limiter
        self.judge_calls = 0

    async def _ask(
        self, purpose: str, prompt: str, allowed: Sequence[str], record: _Verdicts
    ) -> str:
        """Ask the judge until it returns an allowed verdict.

        Raises:
            JudgeUnparseableError: When every attempt lacks a verdict
        """
        for attempt in range(self.judge_config.max_retries + 1):
            if self._limiter is not None:
                await self._limiter.acquire()
            self.judge_calls += 1
            reply = await self.judge.complete(prompt)
            verdict = parse_verdict(reply)
            if verdict not in allowed:
                verdict = None
            record.transcripts.append(JudgeTranscript(purpose, prompt, reply, verdict))
            if verdict is not None:
                return verdict
            logger.warning(
                "Reward: unparseable {} verdict (attempt {})", purpose, attempt + 1
            )
        raise JudgeUnparseableError(f"{purpose}: no verdict in judge reply")

    async def score_answer(
        self,
        question: str,
        gold: Sequence[str],
        final: str,
        record: _Verdicts | None = None,
    ) -> float:
        """1 if the judge accepts ``final`` against the gold candidates, else 0."""
        record = record if record is not None else _Verdicts()
        prompt = format_answer_judge(question, gold, final)
        try:
            allowed = tuple(BINARY_VERDICT_SCORES)
            verdict = await self._ask("answer", prompt, allowed, record)
        except JudgeUnparseableError:
            record.flags.append("answer_judge_unparseable")
            return 0.0
        return BINARY_VERDICT_SCORES[verdict]

    async def score_img_retrieval(
        self, t: Trajectory, query: MultimodalQuery, record: _Verdicts | None = None
    ) -> float:
        """Grade how the reasoning identified the entity in the image."""
        record = record if record is not None else _Verdicts()
        prompt = self.rubric.image_recognition.format(
            reference=query.visual_reference, reasoning=all_reasoning(t)
        )
        try:
            allowed = tuple(IMAGE_VERDICT_SCORES)
            verdict = await self._ask("image", prompt, allowed, record)
        except JudgeUnparseableError:
            record.flags.append("image_judge_unparseable")
            return 0.0
        return IMAGE_VERDICT_SCORES[verdict]

    async def score_text_retrieval(
        self,
        t: Trajectory,
        evidence_hops: Sequence[EvidenceHop],
        record: _Verdicts | None = None,
    ) -> float:
        """0.5 times the share of hops the gathered information supports.

        Raises:
            NoEvidenceError: If ``evidence_hops`` is empty
        """
        if not evidence_hops:
            raise NoEvidenceError(f"{t.query_id} has no evidence hops")
        record = record if record is not None else _Verdicts()
        evidence = evidence_text(t)
        supported = 0
        for hop in evidence_hops:
            prompt = self.rubric.hop_support.format(claim=hop.claim, evidence=evidence)
            try:
                verdict = await self._ask(
                    f"hop{hop.hop_index}", prompt, tuple(BINARY_VERDICT_SCORES), record
                )
            except JudgeUnparseableError:
                record.flags.append(f"hop{hop.hop_index}_judge_unparseable")
                continue
            supported += verdict == "yes"
        return TEXT_RETRIEVAL_WEIGHT * supported / len(evidence_hops)

    async def score(self, t: Trajectory, query: MultimodalQuery) -> RewardBreakdown:
        """Compose all components; format failures short-circuit to -1."""
        fmt = score_format(t)
        if fmt < 0:
            return RewardBreakdown(format=-1.0, total=-1.0, flags=("format_invalid",))

        answer_rec, image_rec, text_rec = _Verdicts(), _Verdicts(), _Verdicts()
        final = t.final_answer or ""

        async def text_component() -> float | None:
            try:
                return await self.score_text_retrieval(t, query.evidence_hops, text_rec)
            except NoEvidenceError:
                text_rec.flags.append("no_evidence")
                return None

        async def image_component() -> float:
            return await self.score_img_retrieval(t, query, image_rec)

        answer_task = self.score_answer(
            query.question, query.gold_candidates, final, answer_rec
        )
        if self.reward_config.use_retrieval_reward:
            answer, img, text = await asyncio.gather(
                answer_task, image_component(), text_component()
            )
        else:
            answer, img, text = await answer_task, None, None

        total = fmt + answer + (img or 0.0) + (text or 0.0)
        return RewardBreakdown(
            format=fmt,
            total=total,
            answer=answer,
            img_retrieval=img,
            text_retrieval=text,
            judge_transcripts=tuple(
                answer_rec.transcripts + image_rec.transcripts + text_rec.transcripts
            ),
            flags=tuple(answer_rec.flags + image_rec.flags + text_rec.flags),
        )
