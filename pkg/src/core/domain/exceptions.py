"""Domain exceptions for the multimodal search-agent runtime."""

from __future__ import annotations

from collections.abc import Sequence


class DomainError(Exception):
    """Base exception for domain-level errors."""


class ParseFailure(DomainError):
    """Raised when an assistant turn does not follow the tool-call protocol.

    Args:
        reason: Machine-readable reason (e.g. ``missing_think``, ``multiple_calls``)
        detail: Human-readable explanation
    """

    def __init__(self, reason: str, detail: str = "") -> None:
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


class ToolFailure(DomainError):
    """Base class for failures of the tool environment (not the policy)."""


class BackendUnavailableError(ToolFailure):
    """Raised when a backend cannot be reached or answers with an error."""


class InvalidImageError(ToolFailure):
    """Raised when an image reference cannot be resolved or read."""


class EmptyCorpusError(ToolFailure):
    """Raised when text search runs over a corpus without chunks."""


class EmptyResponseError(ToolFailure):
    """Raised when the answer generator returns blank text."""


class PolicyUnavailableError(DomainError):
    """Raised when the policy endpoint cannot produce a turn."""


class JudgeUnparseableError(DomainError):
    """Raised when a judge reply contains no recognizable verdict token."""


class NoEvidenceError(DomainError):
    """Raised when text-retrieval scoring is asked for an item without evidence hops."""


class SpanMismatchError(DomainError):
    """Raised when transcript spans do not tile the rendered text."""


class AlignmentError(DomainError):
    """Raised when per-token sequences do not line up."""


class BatchFormatError(DomainError):
    """Raised when an exported batch file cannot be read back."""


class InvalidGraphError(DomainError):
    """Raised when a knowledge graph references unknown entities or relations."""


class SolverUnavailableError(DomainError):
    """Raised when the difficulty solver endpoint cannot answer."""


class CandidateDeferredError(DomainError):
    """Raised when chain validation hit an environment fault; retry later."""


class ConfigValidationError(DomainError):
    """Raised when a run configuration has invalid fields.

    Args:
        fields: Dotted paths of every failing field
        messages: One message per failing field
    """

    def __init__(self, fields: Sequence[str], messages: Sequence[str]) -> None:
        self.fields = list(fields)
        self.messages = list(messages)
        lines = "; ".join(f"{f}: {m}" for f, m in zip(self.fields, self.messages))
        count = len(self.fields)
        super().__init__(f"Invalid configuration ({count} field(s)): {lines}")
