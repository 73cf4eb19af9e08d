"""Rollout engine: drives the Think → Tool_Call → Information loop.

Each assistant turn must hold exactly one ``<think>`` block followed by
exactly one ``<tool_call>`` whose body is a JSON object
``{"name": ..., "arguments": {...}}``. A turn that breaks the protocol ends
the rollout with ``parse_failure``; a tool that keeps failing after retries
ends it with ``tool_failure``; calling ``answer_expert`` ends it with
``answered``.
"""

from __future__ import annotations

import asyncio
import json
import re
from collections.abc import Sequence
from typing import Any

from loguru import logger
from tenacity import (
    AsyncRetrying,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from src.core.domain.config import RolloutConfig
from src.core.domain.exceptions import (
    BackendUnavailableError,
    EmptyResponseError,
    ParseFailure,
    ToolFailure,
)
from src.core.domain.models import (
    AnswerExpert,
    ChatMessage,
    ImageRef,
    ImageSearch,
    MultimodalQuery,
    PolicyTurn,
    Termination,
    TextSearch,
    ToolCall,
    ToolName,
    ToolResponse,
    Trajectory,
    TrajectoryStep,
)
from src.core.ports.outgoing.clients import PolicyClient
from src.core.usecases.prompts import build_rollout_prompt
from src.core.usecases.tool_env import ToolEnvironment, describe_call
from src.core.usecases.transcript import (
    INFORMATION_CLOSE,
    INFORMATION_OPEN,
    image_handle,
    render_context,
    render_transcript,
    response_images,
)

_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_CALL_RE = re.compile(r"<tool_call>(.*?)</tool_call>", re.DOTALL)

_ALL_TOOLS = tuple(ToolName)
_RETRYABLE = (BackendUnavailableError, EmptyResponseError)


def parse_turn(
    raw: str, enabled_tools: Sequence[ToolName] = _ALL_TOOLS
) -> tuple[str, ToolCall]:
    """Split an assistant turn into its reasoning and its tool call.

    ``image_search`` may name an image by handle or URI; the returned call
    then carries an unresolved ``ImageRef`` whose ``uri`` is that text.

    Raises:
        ParseFailure: With a machine-readable ``reason``
    """
    if INFORMATION_OPEN in raw or INFORMATION_CLOSE in raw:
        raise ParseFailure("injected_information", "turn writes an information block")

    thinks = list(_THINK_RE.finditer(raw))
    if not thinks:
        reason = "unclosed_think" if "<think>" in raw else "missing_think"
        raise ParseFailure(reason)
    if len(thinks) > 1 or raw.count("<think>") > 1:
        raise ParseFailure("multiple_think", f"{raw.count('<think>')} think blocks")

    opened = raw.count("<tool_call>")
    if opened == 0:
        raise ParseFailure("missing_tool_call")
    if opened > 1:
        raise ParseFailure("multiple_calls", f"{opened} tool calls")
    call_match = _CALL_RE.search(raw)
    if call_match is None:
        raise ParseFailure("malformed_json", "tool_call block is not closed")
    if call_match.start() < thinks[0].end():
        raise ParseFailure("think_after_call", "reasoning must precede the tool call")

    try:
        payload = json.loads(call_match.group(1))
    except json.JSONDecodeError as e:
        raise ParseFailure("malformed_json", str(e)) from e
    if not isinstance(payload, dict) or not isinstance(payload.get("name"), str):
        raise ParseFailure("malformed_json", "expected an object with a string name")
    arguments = payload.get("arguments", {})
    if not isinstance(arguments, dict):
        raise ParseFailure("invalid_arguments", "arguments must be an object")

    try:
        tool = ToolName(payload["name"])
    except ValueError:
        raise ParseFailure("unknown_tool", payload["name"]) from None
    if tool not in enabled_tools:
        raise ParseFailure("unknown_tool", f"{tool.value} is disabled")

    return thinks[0].group(1).strip(), _build_call(tool, arguments)


def _build_call(tool: ToolName, arguments: dict[str, Any]) -> ToolCall:
    allowed = {
        ToolName.IMAGE_SEARCH: {"image"},
        ToolName.TEXT_SEARCH: {"query"},
        ToolName.ANSWER_EXPERT: set(),
    }[tool]
    extra = set(arguments) - allowed
    if extra:
        raise ParseFailure("invalid_arguments", f"unexpected {sorted(extra)}")

    match tool:
        case ToolName.IMAGE_SEARCH:
            image = arguments.get("image")
            if image is None:
                return ImageSearch()
            if not isinstance(image, str) or not image.strip():
                raise ParseFailure(
                    "invalid_arguments", "image must be a non-empty string"
                )
            return ImageSearch(image=ImageRef(uri=image.strip()))
        case ToolName.TEXT_SEARCH:
            query = arguments.get("query")
            if not isinstance(query, str) or not query.strip():
                raise ParseFailure(
                    "invalid_arguments", "query must be a non-empty string"
                )
            return TextSearch(query=query)
        case ToolName.ANSWER_EXPERT:
            return AnswerExpert()


def _bind_image(
    call: ImageSearch, query: MultimodalQuery, history: Sequence[TrajectoryStep]
) -> ImageSearch:
    if call.image is None:
        return ImageSearch(image=query.image)
    known = [query.image]
    for step in history:
        known.extend(response_images(step.tool_response))
    wanted = call.image.uri
    for image in known:
        if wanted in (image_handle(image), image.uri):
            return ImageSearch(image=image)
    raise ParseFailure("invalid_arguments", f"unknown image {wanted!r}")


class RolloutService:
    """Runs rollouts of the policy against the tool environment.

    Args:
        policy: Policy client
        tools: Tool environment
        config: Rollout settings
        enabled_tools: Tools offered to the policy
        attach_result_image: Attach image-search results to later contexts
    """

    def __init__(
        self,
        policy: PolicyClient,
        tools: ToolEnvironment,
        config: RolloutConfig,
        *,
        enabled_tools: Sequence[ToolName] = _ALL_TOOLS,
        attach_result_image: bool = True,
    ) -> None:
        self.policy = policy
        self.tools = tools
        self.config = config
        self.enabled_tools = tuple(enabled_tools)
        self.attach_result_image = attach_result_image
        self.system_prompt = self.prompt_for(config, self.enabled_tools)
        self._slots = asyncio.Semaphore(config.max_concurrency)

    @staticmethod
    def prompt_for(config: RolloutConfig, enabled_tools: Sequence[ToolName]) -> str:
        """System prompt a rollout service with these settings uses."""
        return config.system_prompt or build_rollout_prompt(enabled_tools)

    def render_context(
        self,
        query: MultimodalQuery,
        history: Sequence[TrajectoryStep],
        raw_turns: Sequence[str],
    ) -> list[ChatMessage]:
        """Messages shown to the policy before the next turn."""
        return render_context(
            query,
            history,
            raw_turns,
            system_prompt=self.system_prompt,
            attach_result_image=self.attach_result_image,
        )

    async def run_rollout(
        self, query: MultimodalQuery, sample_index: int = 0
    ) -> Trajectory:
        """Run one rollout until the expert answers or the rollout fails.

        Raises:
            PolicyUnavailableError: If the policy endpoint cannot produce a turn
        """
        steps: list[TrajectoryStep] = []
        raw_turns: list[str] = []
        logprobs: list[tuple[float, ...] | None] = []

        def finish(termination: Termination, reason: str = "") -> Trajectory:
            logger.debug(
                "Rollout: {}#{} finished: {} after {} steps {}",
                query.id,
                sample_index,
                termination.value,
                len(steps),
                reason,
            )
            return Trajectory(
                query_id=query.id,
                steps=tuple(steps),
                terminated=termination,
                raw_turns=tuple(raw_turns),
                sample_index=sample_index,
                turn_logprobs=tuple(logprobs),
                failure_reason=reason,
            )

        for _ in range(self.config.max_turns):
            messages = self.render_context(query, steps, raw_turns)
            observation = render_transcript(messages).text
            turn: PolicyTurn = await self.policy.complete(
                messages,
                temperature=self.config.temperature,
                max_tokens=self.config.max_tokens_per_turn,
            )
            raw_turns.append(turn.text)
            logprobs.append(turn.logprobs)

            try:
                reasoning, call = parse_turn(turn.text, self.enabled_tools)
                if isinstance(call, ImageSearch):
                    call = _bind_image(call, query, steps)
            except ParseFailure as e:
                return finish(Termination.PARSE_FAILURE, e.reason)

            try:
                response = await self._call_tool(call, query, steps, reasoning)
            except ToolFailure as e:
                logger.warning(
                    "Rollout: {} failed for {}#{}: {}",
                    describe_call(call),
                    query.id,
                    sample_index,
                    e,
                )
                return finish(Termination.TOOL_FAILURE, f"{type(e).__name__}: {e}")

            steps.append(TrajectoryStep(observation, reasoning, call, response))
            if isinstance(call, AnswerExpert):
                return finish(Termination.ANSWERED)

        return finish(Termination.TURN_LIMIT)

    async def run_group(self, query: MultimodalQuery) -> list[Trajectory]:
        """Run ``group_size`` independent rollouts, ordered by sample index."""
        return list(
            await asyncio.gather(
                *(self._bounded(query, i) for i in range(self.config.group_size))
            )
        )

    async def run_many(
        self, queries: Sequence[MultimodalQuery], samples_per_query: int | None = None
    ) -> list[list[Trajectory]]:
        """Run rollouts for several queries sharing one concurrency cap."""
        n = self.config.group_size if samples_per_query is None else samples_per_query

        async def group(query: MultimodalQuery) -> list[Trajectory]:
            runs = (self._bounded(query, i) for i in range(n))
            return list(await asyncio.gather(*runs))

        return list(await asyncio.gather(*(group(q) for q in queries)))

    async def _bounded(self, query: MultimodalQuery, sample_index: int) -> Trajectory:
        async with self._slots:
            return await self.run_rollout(query, sample_index)

    async def _call_tool(
        self,
        call: ToolCall,
        query: MultimodalQuery,
        history: Sequence[TrajectoryStep],
        reasoning: str,
    ) -> ToolResponse:
        response: ToolResponse | None = None
        async for attempt in AsyncRetrying(
            stop=stop_after_attempt(self.config.tool_retries),
            wait=wait_exponential(multiplier=self.config.retry_backoff_s),
            retry=retry_if_exception_type(_RETRYABLE),
            reraise=True,
        ):
            with attempt:
                if attempt.retry_state.attempt_number > 1:
                    logger.info(
                        "Rollout: retrying {} for {} (attempt {})",
                        describe_call(call),
                        query.id,
                        attempt.retry_state.attempt_number,
                    )
                response = await self.tools.dispatch(call, query, history, reasoning)
        assert response is not None
        return response
