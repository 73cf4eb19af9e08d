"""Rendering of policy contexts into message lists and flat transcripts.

The same rendering backs three consumers: the messages sent to the policy,
the ``observation`` text stored on each step, and the role segments used to
build loss masks. Keeping one renderer guarantees that replaying a stored
trajectory reproduces every observation byte for byte.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

from src.core.domain.models import (
    AnswerResult,
    ChatMessage,
    ImageRef,
    ImageResult,
    MultimodalQuery,
    TextResult,
    ToolResponse,
    TrajectoryStep,
)

INFORMATION_OPEN = "<information>"
INFORMATION_CLOSE = "</information>"


def image_handle(image: ImageRef) -> str:
    """Short identifier the policy uses to refer to an image."""
    return f"img-{image.content_key[:12]}"


def image_marker(image: ImageRef) -> str:
    """Inline placeholder marking where an image is attached."""
    return f"[image: {image_handle(image)}]"


def render_tool_response(response: ToolResponse) -> str:
    """Render a tool response as an ``<information>`` block."""
    match response:
        case ImageResult():
            lines = ["Image search results:"]
            if response.top_image is None:
                lines.append("Top image: none")
            else:
                lines.append(f"Top image: {image_marker(response.top_image)}")
            lines.extend(
                f"Similar image: {image_marker(image)}"
                for image in response.extra_images
            )
            if response.titles:
                lines.extend(
                    f"{i}. {page.title} ({page.url})"
                    for i, page in enumerate(response.titles, start=1)
                )
            else:
                lines.append("No matching pages.")
        case TextResult():
            lines = ["Text search results:"]
            if response.chunks:
                lines.extend(
                    f"[{i}] ({chunk.source_id}) {chunk.text}"
                    for i, chunk in enumerate(response.chunks, start=1)
                )
            else:
                lines.append("No results.")
        case AnswerResult():
            lines = [f"Answer: {response.answer}"]
    body = "\n".join(lines)
    return f"{INFORMATION_OPEN}\n{body}\n{INFORMATION_CLOSE}"


def response_images(response: ToolResponse) -> tuple[ImageRef, ...]:
    """Images returned by a tool response, in display order."""
    if isinstance(response, ImageResult) and response.top_image is not None:
        return (response.top_image, *response.extra_images)
    return ()


def render_context(
    query: MultimodalQuery,
    history: Sequence[TrajectoryStep],
    raw_turns: Sequence[str],
    *,
    system_prompt: str,
    attach_result_image: bool = True,
) -> list[ChatMessage]:
    """Build the message list shown to the policy before the next turn.

    Layout: system prompt, the question with the query image attached, then
    for each prior step the assistant turn verbatim followed by the tool
    response rendered as an ``<information>`` user message.

    Args:
        query: The question being answered
        history: Completed steps
        raw_turns: Verbatim assistant turns aligned with ``history``
        system_prompt: Rollout system prompt
        attach_result_image: Attach images returned by image search

    Raises:
        ValueError: If there are fewer raw turns than steps
    """
    if len(raw_turns) < len(history):
        msg = f"{len(history)} steps but only {len(raw_turns)} raw turns"
        raise ValueError(msg)
    messages = [
        ChatMessage(role="system", content=system_prompt),
        ChatMessage(
            role="user",
            content=f"{image_marker(query.image)}\nQuestion: {query.question}",
            images=(query.image,),
        ),
    ]
    for step, raw in zip(history, raw_turns, strict=False):
        messages.append(ChatMessage(role="assistant", content=raw))
        images = response_images(step.tool_response) if attach_result_image else ()
        messages.append(
            ChatMessage(
                role="user",
                content=render_tool_response(step.tool_response),
                images=images,
            )
        )
    return messages


@dataclass(frozen=True)
class Segment:
    """A character range of a transcript.

    Args:
        role: Role of the message the range belongs to
        is_header: Role header or separator rather than message content
        message_index: Index of the message in the rendered list
        start: First character (inclusive)
        end: Last character (exclusive)
    """

    role: str
    is_header: bool
    message_index: int
    start: int
    end: int


@dataclass(frozen=True)
class Transcript:
    """Flat text of a message list plus its role segments."""

    text: str
    segments: tuple[Segment, ...]


def render_transcript(messages: Sequence[ChatMessage]) -> Transcript:
    """Concatenate messages under ``<|role|>`` headers.

    Every character of the text belongs to exactly one segment, so the
    segments tile the transcript.
    """
    parts: list[str] = []
    segments: list[Segment] = []
    cursor = 0
    for index, message in enumerate(messages):
        header = ("\n" if index else "") + f"<|{message.role}|>\n"
        for text, is_header in ((header, True), (message.content, False)):
            if not text:
                continue
            parts.append(text)
            segments.append(
                Segment(message.role, is_header, index, cursor, cursor + len(text))
            )
            cursor += len(text)
    return Transcript(text="".join(parts), segments=tuple(segments))
