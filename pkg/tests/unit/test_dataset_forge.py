"""Unit tests for chain enumeration, templating, labeling and dataset builds."""

import random
from collections import Counter

import pytest

from src.adapters.outgoing.llm.stubs import ConstantSolver, RuleBasedJudge
from src.adapters.outgoing.persistence.jsonl import load_templates
from src.adapters.outgoing.search.mock import MockTextSearch
from src.adapters.outgoing.search.scorers import LexicalScorer
from src.core.domain.config import ForgeConfig, JudgeConfig
from src.core.domain.exceptions import (
    BackendUnavailableError,
    CandidateDeferredError,
    SolverUnavailableError,
)
from src.core.domain.graph import (
    CandidateQuestion,
    ChainHop,
    Entity,
    KnowledgeGraph,
    ReasoningChain,
    Relation,
    Triple,
)
from src.core.domain.models import Difficulty, ImageRef
from src.core.ports.outgoing.clients import TextSearchBackend
from src.core.usecases.dataset_forge import (
    DatasetForgeService,
    ForgeReport,
    Rejection,
    balance,
    candidate_id,
    check_uniqueness,
    enumerate_chains,
    label_from_attempts,
    names_start_entity,
    render_claims,
    render_question,
)
from src.core.usecases.retrieval import Corpus, RetrieveRerankSearch
from src.core.usecases.reward import RewardService
from tests.synthetic import SyntheticWorld, synthetic_world

IMAGE = ImageRef.from_url("https://images.example.org/x.jpg")


def random_graph(rng: random.Random) -> KnowledgeGraph:
    n = rng.randint(3, 7)
    relations = [f"r{i}" for i in range(rng.randint(1, 3))]
    triples = {
        Triple(f"e{rng.randrange(n)}", rng.choice(relations), f"e{rng.randrange(n)}")
        for _ in range(rng.randint(0, 14))
    }
    return KnowledgeGraph.build(
        (Entity(f"e{i}", f"Entity {i}") for i in range(n)),
        (Relation(r, r) for r in relations),
        (t for t in triples if t.subject != t.object),
    )


def dfs_chains(g: KnowledgeGraph, start: str, max_depth: int) -> set[tuple]:
    found: set[tuple] = set()

    def walk(path: list[str], hops: list[tuple[str, str]]) -> None:
        if len(hops) >= 2:
            found.add(tuple(hops))
        if len(hops) == max_depth:
            return
        for t in g.triples:
            if t.subject == path[-1] and t.object not in path:
                walk([*path, t.object], [*hops, (t.relation, t.object)])

    walk([start], [])
    return found


def walk_endpoints(g: KnowledgeGraph, node: str, relations: tuple[str, ...]) -> set:
    if not relations:
        return {node}
    out: set[str] = set()
    for t in g.triples:
        if t.subject == node and t.relation == relations[0]:
            out |= walk_endpoints(g, t.object, relations[1:])
    return out


class GradingOutageJudge(RuleBasedJudge):
    """Fails the first ``failures`` answer-grading prompts."""

    def __init__(self, failures: int) -> None:
        self.failures = failures

    async def complete(self, prompt: str) -> str:
        if "Golden Answer:" in prompt and self.failures > 0:
            self.failures -= 1
            raise BackendUnavailableError("judge returned 503")
        return self.judge(prompt)


class ScriptedSolver:
    """Returns the given answers in turn; raises once they run out."""

    def __init__(self, answers: list[str]) -> None:
        self.answers = list(answers)

    async def solve(self, question: CandidateQuestion) -> str:
        if not self.answers:
            raise SolverUnavailableError("solver endpoint timed out")
        return self.answers.pop(0)


def forge(
    search: TextSearchBackend,
    solver: object = None,
    max_depth: int = 3,
    grading_judge: RuleBasedJudge | None = None,
) -> DatasetForgeService:
    judge = RuleBasedJudge()
    return DatasetForgeService(
        ForgeConfig(max_depth=max_depth),
        load_templates(),
        search,
        judge,
        solver or ConstantSolver("unknown"),  # type: ignore[arg-type]
        RewardService(grading_judge or judge, JudgeConfig(backend="rule")),
    )


def corpus_search(world: SyntheticWorld) -> RetrieveRerankSearch:
    corpus = Corpus.from_documents(world.documents, 1000, 200)
    return RetrieveRerankSearch(corpus, LexicalScorer(), LexicalScorer(), 20)


def chain(*hops: tuple[str, str], start: str = "ardent-tower") -> ReasoningChain:
    return ReasoningChain(start, tuple(ChainHop(r, o) for r, o in hops))


@pytest.mark.unit
class TestChainEnumeration:
    """Tests for relation-path enumeration."""

    def test_matches_depth_first_oracle_on_random_graphs(self) -> None:
        """Breadth-first enumeration finds exactly the simple paths of 2..d hops."""
        rng = random.Random(23)
        for _ in range(200):
            g = random_graph(rng)
            start = rng.choice(sorted(g.entities))
            depth = rng.randint(2, 4)

            chains = enumerate_chains(g, start, depth)

            found = [tuple((h.relation, h.object) for h in c.hops) for c in chains]
            assert len(found) == len(set(found))
            assert set(found) == dfs_chains(g, start, depth)
            assert [len(c.hops) for c in chains] == sorted(len(c.hops) for c in chains)
            for c in chains:
                assert start not in c.entity_path[1:]
                assert len(set(c.entity_path)) == len(c.entity_path)

    def test_uniqueness_matches_walk_oracle(self) -> None:
        """A chain is unique iff its relation walk ends at exactly one entity."""
        rng = random.Random(29)
        for _ in range(200):
            g = random_graph(rng)
            start = rng.choice(sorted(g.entities))
            for c in enumerate_chains(g, start, 3):
                endpoints = walk_endpoints(g, start, c.relation_path)
                assert check_uniqueness(g, c) == (len(endpoints) == 1)

    def test_reconverging_bindings_are_unique(self) -> None:
        """Two architects born in the same town still give one answer."""
        entities = [
            Entity(e, e.title())
            for e in ("tower", "voss", "calder", "brindle", "caskwell")
        ]
        relations = [Relation("architect", "architect"), Relation("born", "born in")]
        shared = [
            Triple("tower", "architect", "voss"),
            Triple("tower", "architect", "calder"),
            Triple("voss", "born", "brindle"),
        ]
        reconverging = KnowledgeGraph.build(
            entities, relations, [*shared, Triple("calder", "born", "brindle")]
        )
        diverging = KnowledgeGraph.build(
            entities, relations, [*shared, Triple("calder", "born", "caskwell")]
        )
        c = chain(("architect", "voss"), ("born", "brindle"), start="tower")

        assert check_uniqueness(reconverging, c)
        assert not check_uniqueness(diverging, c)

    def test_invalid_arguments(self) -> None:
        """Unknown starts and single-hop depths are rejected."""
        g = synthetic_world(1).graph()

        with pytest.raises(ValueError):
            enumerate_chains(g, "nowhere", 3)
        with pytest.raises(ValueError):
            enumerate_chains(g, "ardent-tower", 1)

    def test_synthetic_landmark_chains(self) -> None:
        """Each landmark yields two 2-hop chains and one 3-hop chain."""
        g = synthetic_world(1).graph()

        chains = enumerate_chains(g, "ardent-tower", 3)

        assert [c.relation_path for c in chains] == [
            ("architect", "place_of_birth"),
            ("located_in", "country"),
            ("architect", "place_of_birth", "country"),
        ]
        assert all(check_uniqueness(g, c) for c in chains)

    def test_single_hop_chain_is_invalid(self) -> None:
        """Multi-hop means at least two hops."""
        with pytest.raises(ValueError, match="two hops"):
            chain(("architect", "alder-voss"))


@pytest.mark.unit
class TestTemplating:
    """Tests for question and claim rendering."""

    def test_question_refers_to_the_image(self) -> None:
        """The depicted entity appears only as the image reference."""
        g = synthetic_world(1).graph()
        c = chain(("architect", "alder-voss"), ("place_of_birth", "brindle"))

        question = render_question(g, c, load_templates())

        assert "the building in the image" in question
        assert not names_start_entity(question, g, c)
        assert question.endswith("?")

    def test_claims_follow_the_entity_path(self) -> None:
        """One claim per hop, naming both endpoints."""
        g = synthetic_world(1).graph()
        c = chain(("architect", "alder-voss"), ("place_of_birth", "brindle"))

        claims = render_claims(g, c, load_templates())

        assert claims[0] == "Ardent Tower was designed by Alder Voss."
        assert "Alder Voss" in claims[1] and "Brindle" in claims[1]

    def test_unknown_relation_uses_default_wording(self) -> None:
        """Relations without a template fall back to their label."""
        g = KnowledgeGraph.build(
            [Entity("a", "A", image=IMAGE), Entity("b", "B"), Entity("c", "C")],
            [Relation("mentor", "mentor")],
            [Triple("a", "mentor", "b"), Triple("b", "mentor", "c")],
        )
        c = ReasoningChain("a", (ChainHop("mentor", "b"), ChainHop("mentor", "c")))

        question = render_question(g, c, load_templates())

        expected = "What is the mentor of the mentor of the entity in the image?"
        assert question == expected

    def test_naming_detection_uses_aliases(self) -> None:
        """Aliases count as naming the entity."""
        g = KnowledgeGraph.build(
            [Entity("a", "Ardent Tower", aliases=("The Needle",)), Entity("b", "B")],
            [Relation("r", "r")],
            [Triple("a", "r", "b")],
        )
        c = ReasoningChain("a", (ChainHop("r", "b"), ChainHop("r", "b")))

        assert names_start_entity("Who built the needle?", g, c)
        assert not names_start_entity("Who built it?", g, c)

    def test_candidate_ids_are_stable(self) -> None:
        """Same start and relation path, same id."""
        a = chain(("architect", "alder-voss"), ("place_of_birth", "brindle"))
        b = chain(("architect", "x"), ("place_of_birth", "y"))
        c = chain(("located_in", "ironmoor"), ("country", "lorvania"))

        assert candidate_id(a) == candidate_id(b)
        assert candidate_id(a) != candidate_id(c)
        assert candidate_id(a).startswith("q-") and len(candidate_id(a)) == 14


@pytest.mark.unit
class TestLabelingAndBalance:
    """Tests for difficulty labels and rebalancing."""

    @pytest.mark.parametrize(
        ("correct", "label"),
        [
            (3, Difficulty.EASY),
            (2, Difficulty.MEDIUM),
            (1, Difficulty.MEDIUM),
            (0, Difficulty.HARD),
        ],
    )
    def test_label_from_attempts(self, correct: int, label: Difficulty) -> None:
        """All right is easy, all wrong is hard."""
        assert label_from_attempts(correct, 3) is label

    async def test_solver_attempts_are_graded(self) -> None:
        """Two of three correct attempts label the question medium."""
        world = synthetic_world(1)
        service = forge(
            corpus_search(world), ScriptedSolver(["Brindle", "Caskwell", "Brindle"])
        )
        (candidate, *_) = service.candidates(world.graph())

        labeled = await service.label_difficulty(candidate)

        assert labeled.difficulty is Difficulty.MEDIUM
        assert labeled.solver_attempts == ("Brindle", "Caskwell", "Brindle")

    async def test_unavailable_solver_leaves_item_unlabeled(self) -> None:
        """A solver outage is not a difficulty signal."""
        world = synthetic_world(1)
        service = forge(corpus_search(world), ScriptedSolver(["Brindle"]))
        (candidate, *_) = service.candidates(world.graph())

        labeled = await service.label_difficulty(candidate)

        assert labeled.difficulty is Difficulty.UNLABELED
        assert labeled.solver_attempts == ("Brindle",)

    def test_balance_keeps_half_as_many_easy_as_hard(self) -> None:
        """Easy items are sampled down to floor(hard / 2); order is preserved."""
        rng = random.Random(31)
        labels = list(Difficulty)
        for seed in range(100):
            pool = [
                CandidateQuestion(
                    chain(("r", f"x{i}"), ("r", f"y{i}")),
                    f"question {i}?",
                    IMAGE,
                    f"answer {i}",
                    difficulty=rng.choice(labels),
                )
                for i in range(rng.randint(0, 30))
            ]
            counts = Counter(q.difficulty for q in pool)

            kept = balance(pool, seed)

            kept_counts = Counter(q.difficulty for q in kept)
            assert kept_counts[Difficulty.EASY] == min(
                counts[Difficulty.EASY], counts[Difficulty.HARD] // 2
            )
            assert kept_counts[Difficulty.HARD] == counts[Difficulty.HARD]
            assert kept_counts[Difficulty.MEDIUM] == counts[Difficulty.MEDIUM]
            assert kept_counts[Difficulty.UNLABELED] == 0
            positions = [pool.index(q) for q in kept]
            assert positions == sorted(positions)
            assert balance(pool, seed) == kept


@pytest.mark.unit
class TestDatasetForge:
    """Tests for the full build over the synthetic world."""

    async def test_build_emits_validated_multi_hop_items(self) -> None:
        """Every item has >= 2 hops, one evidence passage per hop and an image."""
        world = synthetic_world()
        g = world.graph()
        report = ForgeReport()

        dataset = await forge(corpus_search(world)).build(g, seed=0, report=report)

        assert len(dataset) == 21
        assert report.labels == Counter({"hard": 21})
        assert report.emitted == 21
        assert len({q.id for q in dataset}) == 21
        docs = {d.id: d.text for d in world.documents}
        for q in dataset:
            assert q.is_training_item
            assert q.difficulty is Difficulty.HARD
            assert q.image_entity
            assert q.image_entity.casefold() not in q.question.casefold()
            for hop in q.evidence_hops:
                assert hop.support_passage in docs[hop.source_id]

    async def test_build_is_deterministic(self) -> None:
        """Same graph, corpus and seed give the same dataset."""
        world = synthetic_world(3)

        first = await forge(corpus_search(world)).build(world.graph(), seed=5)
        second = await forge(corpus_search(world)).build(world.graph(), seed=5)

        assert first == second

    async def test_missing_passages_reject_candidates(self) -> None:
        """Without birthplace documents the architect chains fail validation."""
        world = synthetic_world(2)
        architects = {"alder-voss", "bryn-calder"}
        pruned = SyntheticWorld(
            world.entities,
            world.triples,
            tuple(d for d in world.documents if d.id not in architects),
        )
        report = ForgeReport()

        dataset = await forge(corpus_search(pruned)).build(
            world.graph(), seed=0, report=report
        )

        assert report.rejected == 4
        assert len(dataset) == 2
        landmarks = {"ardent-tower", "bellmore-hall"}
        assert {q.evidence_hops[0].source_id for q in dataset} == landmarks

    async def test_validation_reports_the_failing_hop(self) -> None:
        """Rejections name the unsupported hop."""
        world = synthetic_world(1)
        pruned = SyntheticWorld(
            world.entities,
            world.triples,
            tuple(d for d in world.documents if d.id != "alder-voss"),
        )
        c = chain(("architect", "alder-voss"), ("place_of_birth", "brindle"))

        outcome = await forge(corpus_search(pruned)).validate_chain(world.graph(), c)

        assert isinstance(outcome, Rejection)
        assert outcome.hop_index == 1

    async def test_search_outage_defers_candidates(self) -> None:
        """Backend faults neither accept nor reject a candidate."""
        world = synthetic_world(1)
        report = ForgeReport()

        dataset = await forge(MockTextSearch(failures=100)).build(
            world.graph(), seed=0, report=report
        )

        assert dataset == []
        assert report.deferred == 3
        assert report.rejected == 0

    async def test_grading_outage_defers_only_that_candidate(self) -> None:
        """A judge fault while labelling drops one candidate, not the build."""
        world = synthetic_world(1)
        baseline = await forge(corpus_search(world)).build(world.graph(), seed=0)
        report = ForgeReport()

        dataset = await forge(
            corpus_search(world), grading_judge=GradingOutageJudge(failures=1)
        ).build(world.graph(), seed=0, report=report)

        assert report.deferred == 1
        assert report.rejected == 0
        assert len(dataset) == len(baseline) - 1
        assert report.emitted == len(dataset)
        assert {q.id for q in dataset} < {q.id for q in baseline}

    async def test_grading_outage_is_raised_from_labelling(self) -> None:
        """Labelling surfaces the fault as a deferral."""
        world = synthetic_world(1)
        service = forge(
            corpus_search(world), grading_judge=GradingOutageJudge(failures=1)
        )
        (candidate, *_) = service.candidates(world.graph())

        with pytest.raises(CandidateDeferredError, match="grading failed"):
            await service.label_difficulty(candidate)
