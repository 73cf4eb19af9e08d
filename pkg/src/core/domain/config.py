"""Validated per-module configuration sections.

Each section is a frozen pydantic model so a whole run configuration is
checked in one pass and every invalid field is reported together.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Self

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.domain.models import ToolName

_FROZEN = ConfigDict(frozen=True, extra="forbid")


class RolloutConfig(BaseModel):
    """Rollout loop settings.

    Attributes:
        max_turns: Turn budget per rollout
        group_size: Rollouts per query (G)
        temperature: Sampling temperature passed through to the policy
        max_tokens_per_turn: Token budget of one assistant turn
        system_prompt: Overrides the generated rollout prompt when set
        max_concurrency: Rollouts running at the same time
        tool_retries: Attempts per tool call before the rollout is a tool failure
        retry_backoff_s: Base of the exponential backoff between attempts
    """

    model_config = _FROZEN

    max_turns: int = Field(default=8, ge=1)
    group_size: int = Field(default=8, ge=1)
    temperature: float = Field(default=1.0, ge=0.0)
    max_tokens_per_turn: int = Field(default=1024, ge=1)
    system_prompt: str | None = None
    max_concurrency: int = Field(default=8, ge=1)
    tool_retries: int = Field(default=3, ge=1)
    retry_backoff_s: float = Field(default=0.5, ge=0.0)


class ToolEnvConfig(BaseModel):
    """Tool environment settings (backends, truncation, caching, rate limits)."""

    model_config = _FROZEN

    image_backend: Literal["external_api", "mock"] = "mock"
    text_backend: Literal["local_corpus", "web_api", "mock"] = "local_corpus"
    image_top_images: int = Field(default=1, ge=1)
    image_top_titles: int = Field(default=30, ge=0)
    text_top_k: int = Field(default=10, ge=1)
    first_stage_k: int = Field(default=100, ge=1)
    chunk_size: int = Field(default=1000, ge=1)
    chunk_overlap: int = Field(default=200, ge=0)
    cache_dir: Path | None = Path(".cache/tools")
    web_cache_ttl_s: float = Field(default=7 * 24 * 3600, gt=0)
    image_rate_limit_rps: float = Field(default=5.0, gt=0)
    text_rate_limit_rps: float = Field(default=10.0, gt=0)
    expert_rate_limit_rps: float = Field(default=5.0, gt=0)
    judge_rate_limit_rps: float = Field(default=5.0, gt=0)
    enabled_tools: tuple[ToolName, ...] = (
        ToolName.IMAGE_SEARCH,
        ToolName.TEXT_SEARCH,
        ToolName.ANSWER_EXPERT,
    )
    attach_result_image: bool = True
    corpus_path: Path | None = None
    mock_fixtures_path: Path | None = None
    scorer: Literal["lexical", "embedding"] = "lexical"
    scorer_endpoint: str | None = None
    scorer_api_key: str = ""
    image_api_key: str = ""
    text_api_key: str = ""
    retriever_model: str = "e5-base-v2"
    reranker_model: str = "e5-large-v2"
    query_prefix: str = "query: "
    passage_prefix: str = "passage: "
    image_api_url: str = "https://google.serper.dev/lens"
    web_api_url: str = "https://google.serper.dev/search"
    request_timeout_s: float = Field(default=30.0, gt=0)

    @model_validator(mode="after")
    def _check_cross_field(self) -> Self:
        problems = []
        if self.first_stage_k < self.text_top_k:
            problems.append(
                f"first_stage_k ({self.first_stage_k}) must be >= "
                f"text_top_k ({self.text_top_k})"
            )
        if self.chunk_overlap >= self.chunk_size:
            problems.append("chunk_overlap must be smaller than chunk_size")
        if ToolName.ANSWER_EXPERT not in self.enabled_tools:
            problems.append("answer_expert must stay in enabled_tools")
        if self.scorer == "embedding" and not self.scorer_endpoint:
            problems.append("scorer_endpoint is required for the embedding scorer")
        if problems:
            raise ValueError("; ".join(problems))
        return self


class PolicyConfig(BaseModel):
    """Policy endpoint (OpenAI-compatible chat completions)."""

    model_config = _FROZEN

    endpoint: str | None = None
    model: str = "policy"
    api_key: str = ""
    timeout_s: float = Field(default=120.0, gt=0)
    request_logprobs: bool = True


class GeneratorConfig(BaseModel):
    """Answer-generator (answer expert) binding."""

    model_config = _FROZEN

    backend: Literal["llm", "echo_last_chunk", "constant"] = "llm"
    endpoint: str | None = None
    model: str = "answer-expert"
    api_key: str = ""
    constant_answer: str = "unknown"


class JudgeConfig(BaseModel):
    """LLM-as-judge binding and rubric version."""

    model_config = _FROZEN

    backend: Literal["llm", "rule"] = "llm"
    endpoint: str | None = None
    model: str = "judge"
    api_key: str = ""
    max_retries: int = Field(default=1, ge=0)
    rubric_version: str = "v1"


class RewardConfig(BaseModel):
    """Reward composition switches."""

    model_config = _FROZEN

    use_retrieval_reward: bool = True


class GrpoConfig(BaseModel):
    """Objective hyperparameters recorded in every exported batch."""

    model_config = _FROZEN

    clip_epsilon: float = Field(default=0.2, gt=0.0, lt=1.0)
    kl_beta: float = Field(default=0.001, ge=0.0)


class SolverConfig(BaseModel):
    """Solver used for difficulty labeling."""

    model_config = _FROZEN

    backend: Literal["llm", "constant"] = "llm"
    endpoint: str | None = None
    model: str = "solver"
    api_key: str = ""
    constant_answer: str = "unknown"
    attach_image: bool = False


class ForgeConfig(BaseModel):
    """Dataset construction settings."""

    model_config = _FROZEN

    max_depth: int = Field(default=4, ge=2)
    solver_attempts: int = Field(default=3, ge=1)
    validation_top_k: int = Field(default=5, ge=1)
    snapshot_date: str = "2025-01-01"
    templates_path: Path | None = None
    solver: SolverConfig = SolverConfig()


class EvalConfig(BaseModel):
    """Evaluation harness settings."""

    model_config = _FROZEN

    max_concurrency: int = Field(default=8, ge=1)
    confidence_z: float = Field(default=1.96, gt=0)
    method_name: str = "mm-search-agent"
    backbone: str = ""


class RunConfig(BaseModel):
    """One run's configuration: every module section, validated together."""

    model_config = _FROZEN

    rollout: RolloutConfig = RolloutConfig()
    tools: ToolEnvConfig = ToolEnvConfig()
    policy: PolicyConfig = PolicyConfig()
    expert: GeneratorConfig = GeneratorConfig()
    judge: JudgeConfig = JudgeConfig()
    reward: RewardConfig = RewardConfig()
    grpo: GrpoConfig = GrpoConfig()
    forge: ForgeConfig = ForgeConfig()
    eval: EvalConfig = EvalConfig()
