"""JSON Lines files: datasets, trajectories, rewards, graphs and corpora.

Formats are documented in ``docs/formats.md``. Writers emit one compact JSON
object per line with a trailing newline, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from loguru import logger

from src.core.domain.codec import (
    decode_query,
    decode_trajectory,
    encode_query,
    encode_trajectory,
    reward_from_dict,
    reward_to_dict,
)
from src.core.domain.graph import Entity, KnowledgeGraph, Relation, Triple
from src.core.domain.models import (
    ImageRef,
    MultimodalQuery,
    RewardBreakdown,
    Trajectory,
)
from src.core.usecases.dataset_forge import QuestionTemplates
from src.core.usecases.retrieval import Document


def read_jsonl(path: Path) -> Iterator[dict[str, Any]]:
    """Yield one object per non-blank line.

    Raises:
        ValueError: With the line number of the first malformed line
    """
    with path.open(encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                msg = f"{path}:{number}: {e}"
                raise ValueError(msg) from e


def write_lines(path: Path, lines: Iterable[str]) -> int:
    """Write pre-serialized JSON lines; returns the number written."""
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")
            count += 1
    logger.debug("JSONL: wrote {} records to {}", count, path)
    return count


def dumps(data: Any) -> str:
    """Compact, key-ordered JSON."""
    return json.dumps(data, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


# ── Datasets and trajectories ─────────────────────────────────────


def load_dataset(path: Path) -> list[MultimodalQuery]:
    """Read dataset items."""
    return [decode_query(json.dumps(obj)) for obj in read_jsonl(path)]


def write_dataset(path: Path, dataset: Sequence[MultimodalQuery]) -> int:
    return write_lines(path, (encode_query(q) for q in dataset))


def load_trajectories(path: Path) -> list[Trajectory]:
    return [decode_trajectory(json.dumps(obj)) for obj in read_jsonl(path)]


def write_trajectories(path: Path, trajectories: Iterable[Trajectory]) -> int:
    return write_lines(path, (encode_trajectory(t) for t in trajectories))


# ── Rewards ───────────────────────────────────────────────────────


@dataclass(frozen=True)
class RewardRecord:
    """Reward of one trajectory, or why it was excluded from scoring."""

    query_id: str
    sample_index: int
    reward: RewardBreakdown | None
    excluded: str | None = None


def write_rewards(
    path: Path, records: Iterable[RewardRecord], *, audit: bool = False
) -> int:
    def line(record: RewardRecord) -> str:
        return dumps(
            {
                "query_id": record.query_id,
                "sample_index": record.sample_index,
                "reward": (
                    reward_to_dict(record.reward, audit=audit)
                    if record.reward is not None
                    else None
                ),
                "excluded": record.excluded,
            }
        )

    return write_lines(path, (line(r) for r in records))


def load_rewards(path: Path) -> list[RewardRecord]:
    return [
        RewardRecord(
            query_id=obj["query_id"],
            sample_index=int(obj.get("sample_index", 0)),
            reward=reward_from_dict(obj["reward"]) if obj.get("reward") else None,
            excluded=obj.get("excluded"),
        )
        for obj in read_jsonl(path)
    ]


# ── Knowledge graphs, corpora, templates ──────────────────────────


def _image_ref(value: str, base: Path) -> ImageRef:
    if value.startswith(("http://", "https://")):
        return ImageRef.from_url(value)
    if value.startswith("data:"):
        return ImageRef(uri=value)
    path = Path(value)
    return ImageRef.from_path(path if path.is_absolute() else base / path)


def load_graph(graph_path: Path, entities_path: Path) -> KnowledgeGraph:
    """Read triples and entities into a validated graph.

    Triple lines: ``{"subject", "relation", "object", "relation_label"?}``.
    Entity lines: ``{"id", "label", "type"?, "image"?, "aliases"?}``; relative
    image paths resolve against the entities file's directory.

    Raises:
        InvalidGraphError: If a triple references an unknown entity
    """
    entities = []
    for obj in read_jsonl(entities_path):
        image = obj.get("image")
        entities.append(
            Entity(
                id=str(obj["id"]),
                label=obj["label"],
                entity_type=obj.get("type", "entity"),
                image=_image_ref(image, entities_path.parent) if image else None,
                aliases=tuple(obj.get("aliases", ())),
            )
        )
    relations: dict[str, Relation] = {}
    triples = []
    for obj in read_jsonl(graph_path):
        relation = str(obj["relation"])
        label = obj.get("relation_label") or relation.replace("_", " ")
        relations.setdefault(relation, Relation(relation, label))
        triples.append(Triple(str(obj["subject"]), relation, str(obj["object"])))
    graph = KnowledgeGraph.build(entities, relations.values(), triples)
    logger.info(
        "Graph: {} entities, {} relations, {} triples",
        len(graph.entities),
        len(graph.relations),
        len(graph.triples),
    )
    return graph


def load_corpus(path: Path) -> list[Document]:
    """Read documents from a ``.jsonl`` file or a directory.

    In a directory, ``*.jsonl`` files hold ``{"id", "text", "title"?}`` lines
    and every ``*.txt`` file is one document named after its stem.
    """
    files = sorted(path.iterdir()) if path.is_dir() else [path]
    documents: list[Document] = []
    for file in files:
        if file.suffix == ".jsonl":
            documents.extend(
                Document(
                    id=str(obj["id"]), text=obj["text"], title=obj.get("title", "")
                )
                for obj in read_jsonl(file)
            )
        elif file.suffix == ".txt":
            text = file.read_text(encoding="utf-8")
            documents.append(Document(id=file.stem, text=text))
    return documents


def load_templates(path: Path | None = None) -> QuestionTemplates:
    """Read question templates; the packaged table when ``path`` is None."""
    if path is None:
        packaged = resources.files("src.data").joinpath("question_templates.json")
        text = packaged.read_text(encoding="utf-8")
    else:
        text = path.read_text(encoding="utf-8")
    return QuestionTemplates.model_validate_json(text)
