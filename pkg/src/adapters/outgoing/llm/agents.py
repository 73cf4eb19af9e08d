"""pydantic-ai agents behind the judge, answer-expert and solver ports.

Every agent talks to an OpenAI-compatible chat endpoint (vLLM, SGLang,
OpenRouter, ...). Transport and provider errors are mapped to the domain's
availability errors so use cases never see pydantic-ai or httpx exceptions.
"""

from __future__ import annotations

from loguru import logger
from pydantic_ai import Agent, BinaryContent, ImageUrl
from pydantic_ai.models import Model
from pydantic_ai.models.openai import OpenAIModel
from pydantic_ai.providers.openai import OpenAIProvider

from src.core.domain.exceptions import BackendUnavailableError, SolverUnavailableError
from src.core.domain.graph import CandidateQuestion
from src.core.usecases.prompts import SOLVER_PROMPT

JUDGE_SYSTEM_PROMPT = (
    "You are a careful, strict evaluator. Follow the output format exactly."
)
EXPERT_SYSTEM_PROMPT = "You answer questions concisely from the evidence you are given."
SOLVER_SYSTEM_PROMPT = "You answer questions about images concisely."


def openai_compatible_model(endpoint: str, model_name: str, api_key: str = "") -> Model:
    """Bind a pydantic-ai model to an OpenAI-compatible endpoint.

    Args:
        endpoint: Base URL ending in ``/v1``
        model_name: Model identifier served by the endpoint
        api_key: Bearer token (local servers usually accept any value)
    """
    provider = OpenAIProvider(base_url=endpoint, api_key=api_key or "not-needed")
    logger.debug("LLM: model '{}' at {}", model_name, endpoint)
    return OpenAIModel(model_name, provider=provider)


class PydanticAIJudge:
    """LLM-as-judge over a pydantic-ai agent with free-text output."""

    def __init__(self, model: Model | str) -> None:
        self.agent: Agent[None, str] = Agent(
            model, system_prompt=JUDGE_SYSTEM_PROMPT, output_type=str
        )

    async def complete(self, prompt: str) -> str:
        try:
            result = await self.agent.run(prompt)
        except Exception as e:
            logger.error("Judge: request failed: {}", e)
            raise BackendUnavailableError(f"Judge endpoint failed: {e}") from e
        return str(result.output)


class PydanticAIAnswerGenerator:
    """Text-only answer expert."""

    def __init__(self, model: Model | str) -> None:
        self.agent: Agent[None, str] = Agent(
            model, system_prompt=EXPERT_SYSTEM_PROMPT, output_type=str
        )

    async def generate(self, prompt: str) -> str:
        try:
            result = await self.agent.run(prompt)
        except Exception as e:
            logger.error("Expert: request failed: {}", e)
            raise BackendUnavailableError(f"Answer generator failed: {e}") from e
        return str(result.output)

    async def ping(self) -> None:
        await self.generate("Reply with OK.")


class PydanticAISolver:
    """Solver for difficulty labeling; optionally shown the question image."""

    def __init__(self, model: Model | str, *, attach_image: bool = False) -> None:
        self.agent: Agent[None, str] = Agent(
            model, system_prompt=SOLVER_SYSTEM_PROMPT, output_type=str
        )
        self.attach_image = attach_image

    async def solve(self, question: CandidateQuestion) -> str:
        prompt = SOLVER_PROMPT.format(question=question.question_text)
        content: list[str | ImageUrl | BinaryContent] = [prompt]
        if self.attach_image:
            image = question.image
            if image.is_remote:
                content.append(ImageUrl(url=image.uri))
            else:
                content.append(
                    BinaryContent(data=image.read_bytes(), media_type=image.media_type)
                )
        try:
            result = await self.agent.run(content)
        except Exception as e:
            raise SolverUnavailableError(f"Solver failed: {e}") from e
        return str(result.output)
