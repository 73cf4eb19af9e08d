"""Incoming port interfaces for the search-agent runtime.

These define the use case contracts the application exposes.
The CLI adapter calls these interfaces.
"""

from collections.abc import Mapping, Sequence
from typing import Any, Protocol

from src.core.domain.graph import KnowledgeGraph
from src.core.domain.models import (
    MultimodalQuery,
    RewardBreakdown,
    ToolCall,
    ToolResponse,
    Trajectory,
    TrajectoryStep,
)
from src.core.domain.training import GroupBatch
from src.core.usecases.dataset_forge import ForgeReport
from src.core.usecases.evaluation import EvalReport
from src.core.usecases.grpo import GroupSummary
from src.core.usecases.tool_env import BackendStatus, ToolEnvStats


class RolloutUseCase(Protocol):
    """Use case interface for running the policy against the tools."""

    async def run_rollout(
        self, query: MultimodalQuery, sample_index: int = 0
    ) -> Trajectory:
        """Run one rollout to termination.

        Raises:
            PolicyUnavailableError: If the policy endpoint cannot answer
        """
        ...

    async def run_many(
        self, queries: Sequence[MultimodalQuery], samples_per_query: int | None = None
    ) -> list[list[Trajectory]]:
        """Run a group of rollouts per query under one concurrency cap.

        Returns:
            One list of trajectories per query, ordered by sample index
        """
        ...


class ToolEnvironmentUseCase(Protocol):
    """Use case interface for tool dispatch and backend maintenance."""

    async def dispatch(
        self,
        call: ToolCall,
        query: MultimodalQuery,
        history: Sequence[TrajectoryStep],
        reasoning: str,
    ) -> ToolResponse:
        """Execute one tool call.

        Raises:
            ToolFailure: If a backend fails or returns unusable output
        """
        ...

    async def health_check(self) -> dict[str, BackendStatus]:
        """Probe every backend with a canary request."""
        ...

    def stats(self) -> ToolEnvStats:
        """Cache and backend call counters."""
        ...


class RewardUseCase(Protocol):
    """Use case interface for scoring finished trajectories."""

    async def score(self, t: Trajectory, query: MultimodalQuery) -> RewardBreakdown:
        """Compose format, answer and retrieval components into one reward."""
        ...


class TrainingExportUseCase(Protocol):
    """Use case interface for building GRPO batches."""

    def build_groups(
        self,
        trajectories: Sequence[Trajectory],
        rewards: Sequence[RewardBreakdown | None],
        queries: Mapping[str, MultimodalQuery],
    ) -> tuple[list[GroupBatch], list[GroupSummary]]:
        """Group scored rollouts by query and attach advantages.

        Raises:
            SpanMismatchError: If a rendered context cannot be tokenized by span
        """
        ...


class DatasetForgeUseCase(Protocol):
    """Use case interface for building multi-hop VQA datasets."""

    async def build(
        self, g: KnowledgeGraph, seed: int, report: ForgeReport | None = None
    ) -> list[MultimodalQuery]:
        """Enumerate, validate, label and balance questions from ``g``."""
        ...


class EvaluationUseCase(Protocol):
    """Use case interface for benchmark evaluation."""

    async def evaluate(
        self,
        dataset: Sequence[MultimodalQuery],
        *,
        dataset_name: str = "",
        fingerprint: Mapping[str, Any] | None = None,
        with_retrieval: bool = True,
    ) -> tuple[EvalReport, list[Trajectory]]:
        """Run one rollout per item and report judged accuracy."""
        ...
