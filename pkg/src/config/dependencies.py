"""Dependency injection using simple factory functions.

Each ``build_*`` function turns one config section into a service or adapter.
Mock backends and stub models are chosen when the config selects them, so a
whole run can go offline by configuration alone.
"""

from pathlib import Path

from loguru import logger

from src.adapters.outgoing.llm.agents import (
    PydanticAIAnswerGenerator,
    PydanticAIJudge,
    PydanticAISolver,
    openai_compatible_model,
)
from src.adapters.outgoing.llm.policy import HttpPolicyClient
from src.adapters.outgoing.llm.stubs import (
    ConstantAnswerGenerator,
    ConstantSolver,
    EchoLastChunkGenerator,
    RuleBasedJudge,
)
from src.adapters.outgoing.persistence.cache import FileToolCache
from src.adapters.outgoing.persistence.in_memory import InMemoryToolCache
from src.adapters.outgoing.persistence.jsonl import load_corpus, load_templates
from src.adapters.outgoing.search.mock import (
    MockImageSearch,
    MockTextSearch,
    load_mock_backends,
)
from src.adapters.outgoing.search.scorers import EmbeddingScorer, LexicalScorer
from src.adapters.outgoing.search.serper import SerperImageSearch, SerperWebSearch
from src.core.domain.config import (
    GeneratorConfig,
    JudgeConfig,
    PolicyConfig,
    RolloutConfig,
    RunConfig,
    SolverConfig,
    ToolEnvConfig,
)
from src.core.domain.exceptions import ConfigValidationError
from src.core.ports.outgoing.clients import (
    AnswerGenerator,
    ImageSearchBackend,
    JudgeClient,
    PolicyClient,
    Scorer,
    Solver,
    TextSearchBackend,
    Tokenizer,
)
from src.core.ports.outgoing.repositories import ToolCache
from src.core.usecases.dataset_forge import DatasetForgeService
from src.core.usecases.evaluation import EvaluationService
from src.core.usecases.grpo import TrainingExportService
from src.core.usecases.retrieval import Corpus, RetrieveRerankSearch
from src.core.usecases.reward import RewardService
from src.core.usecases.rollout import RolloutService
from src.core.usecases.throttling import AsyncTokenBucket
from src.core.usecases.tool_env import ToolEnvironment


def _require[T](value: T | None, field: str, reason: str) -> T:
    if value is None or value == "":
        raise ConfigValidationError([field], [reason])
    return value


def build_cache(config: ToolEnvConfig) -> ToolCache:
    """Disk cache under ``cache_dir``; in-memory when it is unset."""
    if config.cache_dir is None:
        logger.debug("Using in-memory tool cache")
        return InMemoryToolCache()
    logger.debug("Using disk tool cache at {}", config.cache_dir)
    return FileToolCache(config.cache_dir)


def build_scorers(config: ToolEnvConfig) -> tuple[Scorer, Scorer]:
    """First-stage retriever and reranker scorers."""
    if config.scorer == "lexical":
        return LexicalScorer(), LexicalScorer()
    endpoint = _require(
        config.scorer_endpoint, "tools.scorer_endpoint", "SCORER_ENDPOINT unset"
    )

    def scorer(model: str) -> EmbeddingScorer:
        return EmbeddingScorer(
            endpoint,
            model,
            api_key=config.scorer_api_key,
            query_prefix=config.query_prefix,
            passage_prefix=config.passage_prefix,
            timeout_s=config.request_timeout_s,
        )

    return scorer(config.retriever_model), scorer(config.reranker_model)


def _mock_backends(config: ToolEnvConfig) -> tuple[MockImageSearch, MockTextSearch]:
    if config.mock_fixtures_path is None:
        return MockImageSearch(), MockTextSearch()
    return load_mock_backends(config.mock_fixtures_path)


def build_corpus_search(config: ToolEnvConfig) -> RetrieveRerankSearch:
    """Retrieve-then-rerank search over ``corpus_path``."""
    path: Path = _require(
        config.corpus_path, "tools.corpus_path", "required for local_corpus search"
    )
    corpus = Corpus.from_documents(
        load_corpus(path), config.chunk_size, config.chunk_overlap
    )
    retriever, reranker = build_scorers(config)
    return RetrieveRerankSearch(corpus, retriever, reranker, config.first_stage_k)


def build_text_backend(config: ToolEnvConfig) -> TextSearchBackend:
    match config.text_backend:
        case "local_corpus":
            return build_corpus_search(config)
        case "web_api":
            api_key = _require(
                config.text_api_key, "tools.text_api_key", "TEXT_API_KEY unset"
            )
            return SerperWebSearch(
                api_key,
                url=config.web_api_url,
                ttl_s=config.web_cache_ttl_s,
                timeout_s=config.request_timeout_s,
            )
        case "mock":
            return _mock_backends(config)[1]


def build_image_backend(config: ToolEnvConfig) -> ImageSearchBackend:
    match config.image_backend:
        case "external_api":
            api_key = _require(
                config.image_api_key, "tools.image_api_key", "IMAGE_API_KEY unset"
            )
            return SerperImageSearch(
                api_key,
                url=config.image_api_url,
                timeout_s=config.request_timeout_s,
            )
        case "mock":
            return _mock_backends(config)[0]


def build_answer_generator(config: GeneratorConfig) -> AnswerGenerator:
    match config.backend:
        case "constant":
            return ConstantAnswerGenerator(config.constant_answer)
        case "echo_last_chunk":
            return EchoLastChunkGenerator()
        case "llm":
            endpoint = _require(
                config.endpoint, "expert.endpoint", "EXPERT_ENDPOINT unset"
            )
            logger.info("Answer expert '{}' at {}", config.model, endpoint)
            return PydanticAIAnswerGenerator(
                openai_compatible_model(endpoint, config.model, config.api_key)
            )


def build_judge(config: JudgeConfig) -> JudgeClient:
    if config.backend == "rule":
        return RuleBasedJudge()
    endpoint = _require(config.endpoint, "judge.endpoint", "JUDGE_ENDPOINT unset")
    logger.info("Judge '{}' at {}", config.model, endpoint)
    model = openai_compatible_model(endpoint, config.model, config.api_key)
    return PydanticAIJudge(model)


def build_solver(config: SolverConfig) -> Solver:
    if config.backend == "constant":
        return ConstantSolver(config.constant_answer)
    endpoint = _require(
        config.endpoint, "forge.solver.endpoint", "solver endpoint unset"
    )
    return PydanticAISolver(
        openai_compatible_model(endpoint, config.model, config.api_key),
        attach_image=config.attach_image,
    )


def build_policy(config: PolicyConfig, rollout: RolloutConfig) -> PolicyClient:
    """HTTP policy client; retries follow the rollout retry budget."""
    endpoint = _require(config.endpoint, "policy.endpoint", "POLICY_ENDPOINT unset")
    logger.info("Policy '{}' at {}", config.model, endpoint)
    return HttpPolicyClient(
        endpoint,
        config.model,
        api_key=config.api_key,
        timeout_s=config.timeout_s,
        request_logprobs=config.request_logprobs,
        attempts=rollout.tool_retries,
        backoff_s=rollout.retry_backoff_s,
    )


def build_tool_environment(
    config: RunConfig, *, cache: ToolCache | None = None
) -> ToolEnvironment:
    tools = config.tools
    return ToolEnvironment(
        tools,
        build_image_backend(tools),
        build_text_backend(tools),
        build_answer_generator(config.expert),
        cache if cache is not None else build_cache(tools),
    )


def build_rollout_service(
    config: RunConfig,
    *,
    tools: ToolEnvironment | None = None,
    policy: PolicyClient | None = None,
) -> RolloutService:
    return RolloutService(
        policy if policy is not None else build_policy(config.policy, config.rollout),
        tools if tools is not None else build_tool_environment(config),
        config.rollout,
        enabled_tools=config.tools.enabled_tools,
        attach_result_image=config.tools.attach_result_image,
    )


def build_reward_service(
    config: RunConfig, *, judge: JudgeClient | None = None
) -> RewardService:
    return RewardService(
        judge if judge is not None else build_judge(config.judge),
        config.judge,
        config.reward,
        limiter=AsyncTokenBucket(config.tools.judge_rate_limit_rps),
    )


def build_export_service(
    config: RunConfig, tokenizer: Tokenizer
) -> TrainingExportService:
    """Export service rendering contexts exactly as the rollouts saw them."""
    prompt = RolloutService.prompt_for(config.rollout, config.tools.enabled_tools)
    return TrainingExportService(
        tokenizer,
        config.grpo,
        system_prompt=prompt,
        attach_result_image=config.tools.attach_result_image,
    )


def build_dataset_forge(
    config: RunConfig,
    *,
    search: TextSearchBackend | None = None,
    judge: JudgeClient | None = None,
    solver: Solver | None = None,
) -> DatasetForgeService:
    """Forge wired to the configured text search, judge and solver."""
    judge = judge if judge is not None else build_judge(config.judge)
    return DatasetForgeService(
        config.forge,
        load_templates(config.forge.templates_path),
        search if search is not None else build_text_backend(config.tools),
        judge,
        solver if solver is not None else build_solver(config.forge.solver),
        build_reward_service(config, judge=judge),
        rubric_version=config.judge.rubric_version,
        judge_max_retries=config.judge.max_retries,
        limiter=AsyncTokenBucket(config.tools.judge_rate_limit_rps),
        max_concurrency=config.eval.max_concurrency,
    )


def build_evaluation_service(
    config: RunConfig,
    *,
    rollouts: RolloutService | None = None,
    rewards: RewardService | None = None,
) -> EvaluationService:
    return EvaluationService(
        rollouts if rollouts is not None else build_rollout_service(config),
        rewards if rewards is not None else build_reward_service(config),
        config.eval,
    )
