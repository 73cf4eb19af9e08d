"""Shared fixtures: fast offline tool settings, a sample query and trajectories."""

from collections.abc import Sequence

import pytest

from src.adapters.outgoing.llm.stubs import ConstantAnswerGenerator
from src.adapters.outgoing.persistence.in_memory import InMemoryToolCache
from src.adapters.outgoing.search.mock import MockImageSearch, MockTextSearch
from src.core.domain.config import ToolEnvConfig
from src.core.domain.models import (
    AnswerExpert,
    AnswerResult,
    EvidenceHop,
    ImageRef,
    ImageResult,
    ImageSearch,
    MultimodalQuery,
    PageTitle,
    Termination,
    TextChunk,
    TextResult,
    TextSearch,
    ToolCall,
    ToolResponse,
    Trajectory,
    TrajectoryStep,
)
from src.core.usecases.tool_env import ToolEnvironment
from tests.synthetic import turn

FAST_RATES = {
    "image_rate_limit_rps": 1000.0,
    "text_rate_limit_rps": 1000.0,
    "expert_rate_limit_rps": 1000.0,
    "judge_rate_limit_rps": 1000.0,
}


def fast_tool_config(**overrides: object) -> ToolEnvConfig:
    """Mock backends, in-memory cache and rate limits that never wait."""
    settings: dict[str, object] = {
        "image_backend": "mock",
        "text_backend": "mock",
        "cache_dir": None,
        **FAST_RATES,
    }
    settings.update(overrides)
    return ToolEnvConfig.model_validate(settings)


def make_step(
    call: ToolCall, response: ToolResponse, reasoning: str = "ok"
) -> TrajectoryStep:
    return TrajectoryStep(
        observation="", reasoning=reasoning, tool_call=call, tool_response=response
    )


def answered(
    query_id: str,
    steps: Sequence[TrajectoryStep],
    *,
    sample_index: int = 0,
) -> Trajectory:
    """A trajectory whose raw turns are the canonical rendering of its steps."""
    raw = []
    for step in steps:
        call = step.tool_call
        arguments = {"query": call.query} if isinstance(call, TextSearch) else {}
        raw.append(turn(step.reasoning, call.kind, arguments))
    return Trajectory(
        query_id=query_id,
        steps=tuple(steps),
        terminated=Termination.ANSWERED,
        raw_turns=tuple(raw),
        sample_index=sample_index,
    )


@pytest.fixture
def query_image() -> ImageRef:
    """Remote photo of the landmark in the sample query."""
    return ImageRef.from_url("https://images.example.org/ardent-tower.jpg")


@pytest.fixture
def query(query_image: ImageRef) -> MultimodalQuery:
    """Two-hop question with evidence."""
    return MultimodalQuery(
        id="q-1",
        image=query_image,
        question=(
            "What is the birthplace of the architect of the building in the image?"
        ),
        gold_answer="Brindle",
        aliases=("Brindle Town",),
        evidence_hops=(
            EvidenceHop(
                0,
                "Ardent Tower was designed by Alder Voss.",
                "Ardent Tower was designed by Alder Voss.",
                "ardent-tower",
            ),
            EvidenceHop(
                1,
                "Alder Voss was born in Brindle.",
                "Alder Voss was born in Brindle.",
                "alder-voss",
            ),
        ),
        image_entity="Ardent Tower",
    )


@pytest.fixture
def good_trajectory(query: MultimodalQuery, query_image: ImageRef) -> Trajectory:
    """Recognizes the landmark, retrieves both hops and answers correctly."""
    return answered(
        query.id,
        [
            make_step(
                ImageSearch(image=query_image),
                ImageResult(
                    top_image=None,
                    titles=(PageTitle("Ardent Tower", "https://wiki.example.org/a"),),
                ),
                "The image shows Ardent Tower.",
            ),
            make_step(
                TextSearch("Ardent Tower architect"),
                TextResult(
                    chunks=(
                        TextChunk("Ardent Tower was designed by Alder Voss.", "a", 1.0),
                        TextChunk("Alder Voss was born in Brindle.", "b", 0.9),
                    )
                ),
                "Who designed it and where were they born?",
            ),
            make_step(AnswerExpert(), AnswerResult("Brindle"), "Done."),
        ],
    )


@pytest.fixture
def tool_env() -> ToolEnvironment:
    """Tool environment over empty mock backends."""
    return ToolEnvironment(
        fast_tool_config(),
        MockImageSearch(),
        MockTextSearch(),
        ConstantAnswerGenerator("Brindle"),
        InMemoryToolCache(),
    )
