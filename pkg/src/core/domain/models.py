"""Domain models shared by the rollout, reward, training-export and evaluation modules.

All types are frozen dataclasses so trajectories can be handed to concurrent
workers without copying. Tagged unions carry a ``kind`` literal, which is also
the discriminator used by the JSON codecs.
"""

from __future__ import annotations

import base64
import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Literal

from src.core.domain.exceptions import InvalidImageError


class Difficulty(Enum):
    """Difficulty label assigned by repeated solver attempts."""

    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"
    UNLABELED = "unlabeled"


class Termination(Enum):
    """Why a rollout stopped."""

    ANSWERED = "answered"
    TURN_LIMIT = "turn_limit"
    PARSE_FAILURE = "parse_failure"
    TOOL_FAILURE = "tool_failure"


class ToolName(Enum):
    """Names of the tools the agent may call."""

    IMAGE_SEARCH = "image_search"
    TEXT_SEARCH = "text_search"
    ANSWER_EXPERT = "answer_expert"


@dataclass(frozen=True)
class ImageRef:
    """Opaque image handle plus a content hash used for cache keying.

    Args:
        uri: File path, ``http(s)://`` URL or ``data:`` URI
        sha256: Hex digest of the image bytes (of the URL text for remote images)
        media_type: MIME type of the image
    """

    uri: str
    sha256: str = ""
    media_type: str = "image/jpeg"

    @classmethod
    def from_path(cls, path: str | Path, media_type: str | None = None) -> ImageRef:
        """Create a reference to a local image file, hashing its bytes.

        Raises:
            InvalidImageError: If the file cannot be read
        """
        file_path = Path(path)
        try:
            data = file_path.read_bytes()
        except OSError as e:
            raise InvalidImageError(f"Cannot read image {file_path}: {e}") from e
        return cls(
            uri=str(file_path),
            sha256=hashlib.sha256(data).hexdigest(),
            media_type=media_type or _guess_media_type(file_path.suffix),
        )

    @classmethod
    def from_bytes(cls, data: bytes, media_type: str = "image/jpeg") -> ImageRef:
        """Create a self-contained ``data:`` reference from raw bytes."""
        encoded = base64.b64encode(data).decode("ascii")
        return cls(
            uri=f"data:{media_type};base64,{encoded}",
            sha256=hashlib.sha256(data).hexdigest(),
            media_type=media_type,
        )

    @classmethod
    def from_url(cls, url: str, media_type: str = "image/jpeg") -> ImageRef:
        """Create a reference to a remote image; the URL text stands in for content."""
        return cls(
            uri=url,
            sha256=hashlib.sha256(url.encode("utf-8")).hexdigest(),
            media_type=media_type,
        )

    @property
    def is_remote(self) -> bool:
        """Whether the handle points to an HTTP(S) resource."""
        return self.uri.startswith(("http://", "https://"))

    @property
    def content_key(self) -> str:
        """Key used for cache addressing (content hash, falling back to the URI)."""
        return self.sha256 or hashlib.sha256(self.uri.encode("utf-8")).hexdigest()

    def read_bytes(self) -> bytes:
        """Load the image bytes for local and ``data:`` references.

        Raises:
            InvalidImageError: For remote handles or unreadable files
        """
        if self.uri.startswith("data:"):
            try:
                return base64.b64decode(self.uri.split(",", 1)[1], validate=True)
            except (IndexError, ValueError) as e:
                raise InvalidImageError(f"Malformed data URI: {e}") from e
        if self.is_remote:
            raise InvalidImageError(f"Remote image {self.uri} has no local bytes")
        try:
            return Path(self.uri).read_bytes()
        except OSError as e:
            raise InvalidImageError(f"Cannot read image {self.uri}: {e}") from e


def _guess_media_type(suffix: str) -> str:
    return {
        ".png": "image/png",
        ".gif": "image/gif",
        ".webp": "image/webp",
    }.get(suffix.lower(), "image/jpeg")


@dataclass(frozen=True)
class EvidenceHop:
    """One fact of a multi-hop reasoning chain with its supporting passage.

    Args:
        hop_index: 0-based position in the chain
        claim: The fact this hop establishes
        support_passage: Corpus excerpt supporting the claim
        source_id: Corpus document identifier
    """

    hop_index: int
    claim: str
    support_passage: str
    source_id: str

    def __post_init__(self) -> None:
        """Validate the supporting passage."""
        if not self.support_passage.strip():
            msg = "support_passage must be non-empty"
            raise ValueError(msg)


@dataclass(frozen=True)
class MultimodalQuery:
    """An image plus a question about it, with the gold answer and evidence.

    Args:
        id: Opaque identifier
        image: Image the question is about
        question: Question text
        gold_answer: Reference answer
        aliases: Further accepted answer strings
        evidence_hops: Per-hop supporting evidence (empty for evaluation-only data)
        difficulty: Difficulty label
        image_entity: Name of the entity shown in the image (reference for the
            visual-recognition judge; falls back to the gold answer)
    """

    id: str
    image: ImageRef
    question: str
    gold_answer: str
    aliases: tuple[str, ...] = ()
    evidence_hops: tuple[EvidenceHop, ...] = ()
    difficulty: Difficulty = Difficulty.UNLABELED
    image_entity: str = ""

    def __post_init__(self) -> None:
        """Validate question text and hop numbering."""
        if not self.question.strip():
            msg = "question must be non-empty"
            raise ValueError(msg)
        indices = [hop.hop_index for hop in self.evidence_hops]
        if indices != list(range(len(indices))):
            msg = f"evidence hop indices must be contiguous from 0, got {indices}"
            raise ValueError(msg)

    @property
    def gold_candidates(self) -> tuple[str, ...]:
        """Gold answer followed by its aliases."""
        return (self.gold_answer, *self.aliases)

    @property
    def visual_reference(self) -> str:
        """Entity the image-recognition judge compares the reasoning against."""
        return self.image_entity or self.gold_answer

    @property
    def is_training_item(self) -> bool:
        """Training items need at least two evidence hops."""
        return len(self.evidence_hops) >= 2


# ── Tool calls ────────────────────────────────────────────────────


@dataclass(frozen=True)
class ImageSearch:
    """Reverse image search. ``image`` is bound to the query image when omitted."""

    image: ImageRef | None = None
    kind: Literal["image_search"] = "image_search"


@dataclass(frozen=True)
class TextSearch:
    """Text search over the configured corpus or web engine."""

    query: str
    kind: Literal["text_search"] = "text_search"


@dataclass(frozen=True)
class AnswerExpert:
    """Hand the gathered trajectory to the answer generator."""

    kind: Literal["answer_expert"] = "answer_expert"


ToolCall = ImageSearch | TextSearch | AnswerExpert


# ── Tool responses ────────────────────────────────────────────────


@dataclass(frozen=True)
class PageTitle:
    """Title and URL of a web page returned by image search."""

    title: str
    url: str


@dataclass(frozen=True)
class TextChunk:
    """A retrieved passage with its origin and relevance score."""

    text: str
    source_id: str
    score: float
    offset: int = 0


@dataclass(frozen=True)
class ImageResult:
    """Visually similar image plus titles of the pages it appears on.

    ``extra_images`` holds the runners-up when more than one image is requested.
    """

    top_image: ImageRef | None
    titles: tuple[PageTitle, ...] = ()
    extra_images: tuple[ImageRef, ...] = ()
    latency_ms: int = 0
    cache_hit: bool = False
    kind: Literal["image_result"] = "image_result"


@dataclass(frozen=True)
class TextResult:
    """Ranked text chunks."""

    chunks: tuple[TextChunk, ...] = ()
    latency_ms: int = 0
    cache_hit: bool = False
    kind: Literal["text_result"] = "text_result"


@dataclass(frozen=True)
class AnswerResult:
    """Final answer synthesized by the answer generator."""

    answer: str
    latency_ms: int = 0
    cache_hit: bool = False
    kind: Literal["answer_result"] = "answer_result"


ToolResponse = ImageResult | TextResult | AnswerResult


def canonical_response[R: (ImageResult, TextResult, AnswerResult)](response: R) -> R:
    """Strip per-call metadata so responses compare by payload only."""
    return replace(response, latency_ms=0, cache_hit=False)


def with_call_metadata[R: (ImageResult, TextResult, AnswerResult)](
    response: R, latency_ms: int, cache_hit: bool
) -> R:
    """Attach latency and cache-hit metadata to a payload."""
    return replace(response, latency_ms=latency_ms, cache_hit=cache_hit)


# ── Trajectories ──────────────────────────────────────────────────


@dataclass(frozen=True)
class ChatMessage:
    """One message of the rendered policy context.

    Args:
        role: ``system``, ``user`` or ``assistant``
        content: Message text
        images: Images attached to this message
    """

    role: Literal["system", "user", "assistant"]
    content: str
    images: tuple[ImageRef, ...] = ()


@dataclass(frozen=True)
class PolicyTurn:
    """Text of one assistant turn and its per-token log-probabilities, if reported."""

    text: str
    logprobs: tuple[float, ...] | None = None


@dataclass(frozen=True)
class TrajectoryStep:
    """One Think → Tool_Call → Information cycle.

    Args:
        observation: Rendered context shown to the policy before this turn
        reasoning: Content of the think block
        tool_call: The single tool invocation of the turn
        tool_response: What the tool returned
    """

    observation: str
    reasoning: str
    tool_call: ToolCall
    tool_response: ToolResponse


@dataclass(frozen=True)
class Trajectory:
    """A complete (or in-progress) rollout for one query.

    ``raw_turns`` holds the verbatim policy output of every turn, including a
    trailing turn that failed to parse or whose tool call failed.
    ``terminated`` is ``None`` only while the rollout is still running.

    Args:
        query_id: Identifier of the query
        steps: Completed steps in order
        terminated: Termination reason
        raw_turns: Verbatim assistant turns
        sample_index: Position of this rollout inside its group
        turn_logprobs: Policy log-probabilities per raw turn, when reported
        failure_reason: Parse-failure reason or tool error text
    """

    query_id: str
    steps: tuple[TrajectoryStep, ...] = ()
    terminated: Termination | None = None
    raw_turns: tuple[str, ...] = ()
    sample_index: int = 0
    turn_logprobs: tuple[tuple[float, ...] | None, ...] = ()
    failure_reason: str = ""

    @property
    def final_answer(self) -> str | None:
        """Answer text of the terminal expert call, if the rollout answered."""
        if self.terminated is not Termination.ANSWERED or not self.steps:
            return None
        response = self.steps[-1].tool_response
        return response.answer if isinstance(response, AnswerResult) else None

    @property
    def is_environment_fault(self) -> bool:
        """Tool failures are the environment's fault, not the policy's."""
        return self.terminated is Termination.TOOL_FAILURE


# ── Rewards ───────────────────────────────────────────────────────


@dataclass(frozen=True)
class JudgeTranscript:
    """A judge prompt, the raw reply and the parsed verdict (for audit)."""

    purpose: str
    prompt: str
    reply: str
    verdict: str | None


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-component reward of one trajectory.

    Components that were not evaluated (format short-circuit, ablations,
    missing evidence) are ``None``.
    """

    format: float
    total: float
    answer: float | None = None
    img_retrieval: float | None = None
    text_retrieval: float | None = None
    judge_transcripts: tuple[JudgeTranscript, ...] = ()
    flags: tuple[str, ...] = field(default_factory=tuple)
