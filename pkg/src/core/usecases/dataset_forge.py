"""Multi-hop VQA dataset construction from a knowledge graph and a text corpus.

Pipeline: enumerate relation chains from every depicted entity, keep chains
with a unique answer, template a question that refers to the start entity
only through the image, validate each hop against retrieved passages, label
difficulty with repeated solver attempts and finally rebalance easy items
against hard ones.
"""

from __future__ import annotations

import asyncio
import hashlib
import random
from collections import Counter, deque
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

from loguru import logger
from pydantic import BaseModel, ConfigDict

from src.core.domain.config import ForgeConfig
from src.core.domain.exceptions import (
    CandidateDeferredError,
    JudgeUnparseableError,
    SolverUnavailableError,
    ToolFailure,
)
from src.core.domain.graph import (
    CandidateQuestion,
    ChainHop,
    KnowledgeGraph,
    ReasoningChain,
)
from src.core.domain.models import Difficulty, EvidenceHop, MultimodalQuery
from src.core.ports.outgoing.clients import JudgeClient, Solver, TextSearchBackend
from src.core.usecases.prompts import judge_rubric, parse_verdict
from src.core.usecases.reward import RewardService
from src.core.usecases.throttling import AsyncTokenBucket


class RelationTemplate(BaseModel):
    """Noun phrase and claim sentence of one relation."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    phrase: str
    claim: str


class QuestionTemplates(BaseModel):
    """Template table for question and claim rendering, shipped as data."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    version: str = "v1"
    subject: str = "the {entity_type} in the image"
    question: str = "What is {phrase}?"
    default_phrase: str = "the {relation} of {x}"
    default_claim: str = "The {relation} of {subject} is {object}."
    relations: dict[str, RelationTemplate] = {}


# ── Chain enumeration ─────────────────────────────────────────────


def enumerate_chains(
    g: KnowledgeGraph, start: str, max_depth: int
) -> list[ReasoningChain]:
    """All simple relation paths of 2..max_depth hops from ``start``, breadth-first.

    Within a level, paths follow the (relation, object) order of outgoing triples.
    """
    if start not in g.entities:
        msg = f"Unknown start entity {start!r}"
        raise ValueError(msg)
    if max_depth < 2:
        msg = f"max_depth must be >= 2, got {max_depth}"
        raise ValueError(msg)

    chains: list[ReasoningChain] = []
    queue: deque[tuple[tuple[str, ...], tuple[ChainHop, ...]]] = deque([((start,), ())])
    while queue:
        visited, hops = queue.popleft()
        if len(hops) >= 2:
            chains.append(ReasoningChain(start, hops))
        if len(hops) == max_depth:
            continue
        for triple in g.outgoing(visited[-1]):
            if triple.object in visited:
                continue
            hop = ChainHop(triple.relation, triple.object)
            queue.append(((*visited, triple.object), (*hops, hop)))
    return chains


def check_uniqueness(g: KnowledgeGraph, chain: ReasoningChain) -> bool:
    """Whether the relation sequence leads from the start to exactly one entity."""
    frontier = {chain.start_entity}
    for relation in chain.relation_path:
        frontier = {obj for subject in frontier for obj in g.objects(subject, relation)}
        if not frontier:
            return False
    return len(frontier) == 1


# ── Templating ────────────────────────────────────────────────────


def render_question(
    g: KnowledgeGraph, chain: ReasoningChain, templates: QuestionTemplates
) -> str:
    """Nest relation phrases around the image reference."""
    start = g.entities[chain.start_entity]
    phrase = templates.subject.format(entity_type=start.entity_type)
    for hop in chain.hops:
        template = templates.relations.get(hop.relation)
        if template is not None:
            phrase = template.phrase.format(x=phrase)
        else:
            phrase = templates.default_phrase.format(
                relation=g.relations[hop.relation].label, x=phrase
            )
    return templates.question.format(phrase=phrase)


def render_claims(
    g: KnowledgeGraph, chain: ReasoningChain, templates: QuestionTemplates
) -> list[str]:
    """One factual sentence per hop."""
    path = chain.entity_path
    claims = []
    for i, hop in enumerate(chain.hops):
        template = templates.relations.get(hop.relation)
        pattern = template.claim if template is not None else templates.default_claim
        claims.append(
            pattern.format(
                subject=g.entities[path[i]].label,
                object=g.entities[path[i + 1]].label,
                relation=g.relations[hop.relation].label,
            )
        )
    return claims


def names_start_entity(question: str, g: KnowledgeGraph, chain: ReasoningChain) -> bool:
    """Whether the question text mentions the depicted entity by name."""
    start = g.entities[chain.start_entity]
    text = question.casefold()
    names = (start.label, *start.aliases)
    return any(name.casefold() in text for name in names if name)


# ── Validation, labeling, balancing ───────────────────────────────


@dataclass(frozen=True)
class Rejection:
    """A candidate whose hop ``hop_index`` found no supporting passage."""

    hop_index: int
    claim: str


def candidate_id(chain: ReasoningChain) -> str:
    """Deterministic identifier of a (start, relation sequence) question."""
    key = "\x1f".join((chain.start_entity, *chain.relation_path))
    return "q-" + hashlib.sha256(key.encode("utf-8")).hexdigest()[:12]


def label_from_attempts(correct: int, attempts: int) -> Difficulty:
    """All correct is easy, none correct is hard, anything between is medium."""
    if correct == attempts:
        return Difficulty.EASY
    if correct == 0:
        return Difficulty.HARD
    return Difficulty.MEDIUM


def balance[Q: (CandidateQuestion, MultimodalQuery)](
    pool: Sequence[Q], seed: int
) -> list[Q]:
    """Keep hard and medium items; sample easy ones down to half the hard count.

    Unlabeled items are dropped. The input order is preserved.
    """
    hard = sum(1 for q in pool if q.difficulty is Difficulty.HARD)
    easy_positions = [i for i, q in enumerate(pool) if q.difficulty is Difficulty.EASY]
    quota = min(len(easy_positions), hard // 2)
    kept_easy = set(random.Random(seed).sample(easy_positions, quota))
    return [
        q
        for i, q in enumerate(pool)
        if q.difficulty in (Difficulty.HARD, Difficulty.MEDIUM) or i in kept_easy
    ]


@dataclass
class ForgeReport:
    """Counters of one dataset build."""

    chains: int = 0
    non_unique: int = 0
    duplicate_paths: int = 0
    names_entity: int = 0
    rejected: int = 0
    deferred: int = 0
    labels: Counter[str] = field(default_factory=Counter)
    emitted: int = 0


class DatasetForgeService:
    """Builds a balanced multi-hop dataset.

    Args:
        config: Forge settings
        templates: Question and claim templates
        search: Text search over the corpus used for validation
        judge: Judge for evidence validation
        judge_max_retries: Extra attempts on an unparseable judge reply
        rubric_version: Version of the evidence-validation rubric
        solver: Model attempting questions for difficulty labeling
        answer_grader: Reward service whose answer judge grades solver attempts
        limiter: Judge rate limiter
        max_concurrency: Candidates validated and labeled at the same time
    """

    def __init__(
        self,
        config: ForgeConfig,
        templates: QuestionTemplates,
        search: TextSearchBackend,
        judge: JudgeClient,
        solver: Solver,
        answer_grader: RewardService,
        *,
        rubric_version: str = "v1",
        judge_max_retries: int = 1,
        limiter: AsyncTokenBucket | None = None,
        max_concurrency: int = 8,
    ) -> None:
        self.config = config
        self.templates = templates
        self.search = search
        self.judge = judge
        self.solver = solver
        self.answer_grader = answer_grader
        self.rubric = judge_rubric(rubric_version)
        self.judge_max_retries = judge_max_retries
        self._limiter = limiter
        self._slots = asyncio.Semaphore(max_concurrency)
        self._aliases: dict[str, tuple[str, ...]] = {}

    def candidates(
        self, g: KnowledgeGraph, report: ForgeReport | None = None
    ) -> list[CandidateQuestion]:
        """Unique-answer, non-naming questions for every entity with an image."""
        report = report if report is not None else ForgeReport()
        out: list[CandidateQuestion] = []
        for entity_id in sorted(g.entities):
            entity = g.entities[entity_id]
            if entity.image is None:
                continue
            seen_paths: set[tuple[str, ...]] = set()
            for chain in enumerate_chains(g, entity_id, self.config.max_depth):
                report.chains += 1
                if not check_uniqueness(g, chain):
                    report.non_unique += 1
                    continue
                if chain.relation_path in seen_paths:
                    report.duplicate_paths += 1
                    continue
                seen_paths.add(chain.relation_path)
                question = render_question(g, chain, self.templates)
                if names_start_entity(question, g, chain):
                    report.names_entity += 1
                    continue
                out.append(
                    CandidateQuestion(
                        chain=chain,
                        question_text=question,
                        image=entity.image,
                        answer_label=g.entities[chain.answer].label,
                    )
                )
        logger.info(
            "Forge: {} candidates from {} chains ({} non-unique)",
            len(out),
            report.chains,
            report.non_unique,
        )
        return out

    async def _judge_supports(self, claim: str, evidence: str) -> bool:
        prompt = self.rubric.evidence_validation.format(
            snapshot_date=self.config.snapshot_date, claim=claim, evidence=evidence
        )
        for _ in range(self.judge_max_retries + 1):
            if self._limiter is not None:
                await self._limiter.acquire()
            verdict = parse_verdict(await self.judge.complete(prompt))
            if verdict in ("yes", "no"):
                return verdict == "yes"
        logger.warning("Forge: unparseable validation verdict for {!r}", claim)
        return False

    async def validate_chain(
        self, g: KnowledgeGraph, chain: ReasoningChain
    ) -> tuple[EvidenceHop, ...] | Rejection:
        """Find a supporting passage for every hop.

        Raises:
            CandidateDeferredError: If search or the judge failed; the candidate
                is neither accepted nor rejected
        """
        claims = render_claims(g, chain, self.templates)
        path = chain.entity_path
        evidence: list[EvidenceHop] = []
        try:
            for i, hop in enumerate(chain.hops):
                query = f"{g.entities[path[i]].label} {g.relations[hop.relation].label}"
                result = await self.search.search(query, self.config.validation_top_k)
                support = None
                for chunk in result.chunks:
                    if await self._judge_supports(claims[i], chunk.text):
                        support = chunk
                        break
                if support is None:
                    return Rejection(hop_index=i, claim=claims[i])
                evidence.append(
                    EvidenceHop(i, claims[i], support.text, support.source_id)
                )
        except (ToolFailure, JudgeUnparseableError) as e:
            raise CandidateDeferredError(f"{candidate_id(chain)}: {e}") from e
        return tuple(evidence)

    async def label_difficulty(self, q: CandidateQuestion) -> CandidateQuestion:
        """Attempt the question ``solver_attempts`` times and grade each answer.

        A solver outage leaves the question unlabeled.

        Raises:
            CandidateDeferredError: If grading an attempt failed
        """
        attempts: list[str] = []
        correct = 0
        try:
            for _ in range(self.config.solver_attempts):
                answer = await self.solver.solve(q)
                attempts.append(answer)
                score = await self.answer_grader.score_answer(
                    q.question_text, self._gold(q), answer
                )
                correct += score == 1.0
        except SolverUnavailableError as e:
            logger.warning(
                "Forge: solver unavailable for {}: {}", candidate_id(q.chain), e
            )
            return replace(
                q, difficulty=Difficulty.UNLABELED, solver_attempts=tuple(attempts)
            )
        except (ToolFailure, JudgeUnparseableError) as e:
            raise CandidateDeferredError(
                f"{candidate_id(q.chain)}: grading failed: {e}"
            ) from e
        label = label_from_attempts(correct, self.config.solver_attempts)
        return replace(q, difficulty=label, solver_attempts=tuple(attempts))

    def _gold(self, q: CandidateQuestion) -> tuple[str, ...]:
        return (q.answer_label, *self._aliases.get(q.chain.answer, ()))

    async def build(
        self, g: KnowledgeGraph, seed: int, report: ForgeReport | None = None
    ) -> list[MultimodalQuery]:
        """Run the whole pipeline and return the balanced dataset."""
        report = report if report is not None else ForgeReport()
        self._aliases = {eid: e.aliases for eid, e in g.entities.items()}
        pool = self.candidates(g, report)

        async def process(q: CandidateQuestion) -> CandidateQuestion | None:
            async with self._slots:
                try:
                    outcome = await self.validate_chain(g, q.chain)
                    if isinstance(outcome, Rejection):
                        logger.debug(
                            "Forge: rejected {} at hop {}",
                            candidate_id(q.chain),
                            outcome.hop_index,
                        )
                        report.rejected += 1
                        return None
                    validated = replace(q, validated_evidence=outcome)
                    return await self.label_difficulty(validated)
                except CandidateDeferredError as e:
                    logger.warning("Forge: deferred {}", e)
                    report.deferred += 1
                    return None

        processed = await asyncio.gather(*(process(q) for q in pool))
        labeled = [q for q in processed if q is not None]
        report.labels.update(q.difficulty.value for q in labeled)
        dataset = [self.to_query(g, q) for q in balance(labeled, seed)]
        report.emitted = len(dataset)
        logger.info(
            "Forge: emitted {} questions (labels {})", len(dataset), dict(report.labels)
        )
        return dataset

    def to_query(self, g: KnowledgeGraph, q: CandidateQuestion) -> MultimodalQuery:
        """Convert a validated, labeled candidate into a dataset item."""
        answer = g.entities[q.chain.answer]
        return MultimodalQuery(
            id=candidate_id(q.chain),
            image=q.image,
            question=q.question_text,
            gold_answer=answer.label,
            aliases=answer.aliases,
            evidence_hops=q.validated_evidence,
            difficulty=q.difficulty,
            image_entity=g.entities[q.chain.start_entity].label,
        )
