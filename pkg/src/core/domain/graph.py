"""Knowledge-graph types used by the multi-hop dataset construction pipeline."""

from __future__ import annotations

from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass
from functools import cached_property

from src.core.domain.exceptions import InvalidGraphError
from src.core.domain.models import Difficulty, EvidenceHop, ImageRef


@dataclass(frozen=True)
class Entity:
    """A graph node.

    Args:
        id: Entity identifier
        label: Human-readable name
        entity_type: Coarse type used in question templates ("building", "person")
        image: Image depicting the entity, if any
        aliases: Other accepted names
    """

    id: str
    label: str
    entity_type: str = "entity"
    image: ImageRef | None = None
    aliases: tuple[str, ...] = ()


@dataclass(frozen=True)
class Relation:
    """A graph edge label."""

    id: str
    label: str


@dataclass(frozen=True, order=True)
class Triple:
    """A directed fact ``subject --relation--> object``."""

    subject: str
    relation: str
    object: str


@dataclass(frozen=True)
class KnowledgeGraph:
    """Entities, relations and triples, validated for referential integrity.

    Raises:
        InvalidGraphError: If a triple references an unknown entity or relation
    """

    entities: dict[str, Entity]
    relations: dict[str, Relation]
    triples: frozenset[Triple]

    def __post_init__(self) -> None:
        """Check that every triple endpoint and relation exists."""
        for triple in self.triples:
            endpoints = (triple.subject, triple.object)
            if any(e not in self.entities for e in endpoints):
                msg = f"Triple {triple} references an unknown entity"
                raise InvalidGraphError(msg)
            if triple.relation not in self.relations:
                msg = f"Triple {triple} references unknown relation {triple.relation}"
                raise InvalidGraphError(msg)

    @classmethod
    def build(
        cls,
        entities: Iterable[Entity],
        relations: Iterable[Relation],
        triples: Iterable[Triple],
    ) -> KnowledgeGraph:
        """Create a graph from iterables."""
        return cls(
            entities={e.id: e for e in entities},
            relations={r.id: r for r in relations},
            triples=frozenset(triples),
        )

    @cached_property
    def _outgoing(self) -> dict[str, tuple[Triple, ...]]:
        index: dict[str, list[Triple]] = defaultdict(list)
        for triple in self.triples:
            index[triple.subject].append(triple)
        return {s: tuple(sorted(ts)) for s, ts in index.items()}

    def outgoing(self, entity_id: str) -> tuple[Triple, ...]:
        """Triples leaving ``entity_id``, sorted by (relation, object)."""
        return self._outgoing.get(entity_id, ())

    def objects(self, subject: str, relation: str) -> tuple[str, ...]:
        """All objects reachable from ``subject`` via ``relation``."""
        return tuple(t.object for t in self.outgoing(subject) if t.relation == relation)


@dataclass(frozen=True)
class ChainHop:
    """One hop of a reasoning chain."""

    relation: str
    object: str


@dataclass(frozen=True)
class ReasoningChain:
    """A simple relation path starting at the depicted entity.

    Args:
        start_entity: Entity shown in the image
        hops: Ordered (relation, object) pairs, at least two
    """

    start_entity: str
    hops: tuple[ChainHop, ...]

    def __post_init__(self) -> None:
        """Enforce the multi-hop requirement."""
        if len(self.hops) < 2:
            msg = f"A reasoning chain needs at least two hops, got {len(self.hops)}"
            raise ValueError(msg)

    @property
    def answer(self) -> str:
        """Entity id of the final object."""
        return self.hops[-1].object

    @property
    def relation_path(self) -> tuple[str, ...]:
        """Relation ids along the chain."""
        return tuple(h.relation for h in self.hops)

    @property
    def entity_path(self) -> tuple[str, ...]:
        """Entity ids along the chain, start included."""
        return (self.start_entity, *(h.object for h in self.hops))


@dataclass(frozen=True)
class CandidateQuestion:
    """A templated question for a chain, enriched as it moves through the pipeline.

    Args:
        chain: Source reasoning chain
        question_text: Question referencing the image, never naming the start entity
        image: Image of the start entity
        answer_label: Label of the final object
        validated_evidence: One evidence hop per chain hop once validated
        difficulty: Difficulty label
    """

    chain: ReasoningChain
    question_text: str
    image: ImageRef
    answer_label: str
    validated_evidence: tuple[EvidenceHop, ...] = ()
    difficulty: Difficulty = Difficulty.UNLABELED
    solver_attempts: tuple[str, ...] = ()
