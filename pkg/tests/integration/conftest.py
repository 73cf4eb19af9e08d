"""Fixtures for integration tests.

Writes the synthetic world to disk and builds a run config that wires every
module to offline backends: the local corpus for text search, a fixture file
for image search, the echoing answer expert and the rule-based judge.
"""

import json
from pathlib import Path

import pytest

from src.adapters.outgoing.persistence.jsonl import load_graph
from src.config import dependencies
from src.config.settings import validate_config
from src.core.domain.config import RunConfig
from src.core.domain.models import MultimodalQuery
from src.core.usecases.dataset_forge import ForgeReport
from tests.conftest import FAST_RATES
from tests.synthetic import image_fixture, synthetic_world


@pytest.fixture
def world_files(tmp_path: Path) -> dict[str, Path]:
    """Graph, entities, corpus and image fixture files."""
    paths = synthetic_world().write(tmp_path / "world")
    paths["images"] = tmp_path / "world" / "images.json"
    paths["images"].write_text(json.dumps(image_fixture()), encoding="utf-8")
    return paths


@pytest.fixture
def offline_config(world_files: dict[str, Path]) -> RunConfig:
    """Every backend offline; text search returns the single best passage."""
    return validate_config(
        {
            "rollout": {"group_size": 1, "retry_backoff_s": 0.0},
            "tools": {
                "image_backend": "mock",
                "mock_fixtures_path": str(world_files["images"]),
                "text_backend": "local_corpus",
                "corpus_path": str(world_files["corpus"]),
                "chunk_size": 1000,
                "chunk_overlap": 200,
                "text_top_k": 1,
                "first_stage_k": 20,
                "cache_dir": None,
                **FAST_RATES,
            },
            "expert": {"backend": "echo_last_chunk"},
            "judge": {"backend": "rule"},
            "forge": {"max_depth": 3, "solver": {"backend": "constant"}},
            "eval": {"method_name": "oracle", "backbone": "scripted"},
        }
    )


@pytest.fixture
async def forged_dataset(
    offline_config: RunConfig, world_files: dict[str, Path]
) -> list[MultimodalQuery]:
    """The questions the forge builds from the synthetic world."""
    graph = load_graph(world_files["graph"], world_files["entities"])
    forge = dependencies.build_dataset_forge(offline_config)
    return await forge.build(graph, seed=0, report=ForgeReport())
