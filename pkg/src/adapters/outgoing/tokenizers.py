"""Tokenizer bindings for loss-mask export.

A tokenizer spec is a small JSON document:

- ``{"kind": "regex"}``: whitespace/punctuation tokenizer with stable hashed
  ids; offline and dependency-free, used by tests and smoke runs.
- ``{"kind": "huggingface", "name": "<model id or path>"}``: the trainer's own
  tokenizer via ``transformers`` (install the ``hf`` extra).
"""

from __future__ import annotations

import hashlib
import re
from pathlib import Path
from typing import Annotated, Any, Literal

from loguru import logger
from pydantic import BaseModel, Field, TypeAdapter

from src.core.ports.outgoing.clients import Tokenizer

_TOKEN_RE = re.compile(r"\s+|\w+|[^\w\s]")


class RegexTokenizer:
    """Splits on runs of whitespace, word characters and single symbols.

    Concatenating the pieces gives back the input, so segment-wise token
    counts add up. Ids are the first 4 bytes of a BLAKE2b digest modulo
    ``vocab_size``.
    """

    def __init__(self, vocab_size: int = 1 << 20) -> None:
        self.vocab_size = vocab_size

    @property
    def name(self) -> str:
        return f"regex:{self.vocab_size}"

    def pieces(self, text: str) -> list[str]:
        return _TOKEN_RE.findall(text)

    def encode(self, text: str) -> list[int]:
        return [
            int.from_bytes(hashlib.blake2b(p.encode("utf-8"), digest_size=4).digest())
            % self.vocab_size
            for p in self.pieces(text)
        ]


class HuggingFaceTokenizer:
    """Wraps ``transformers.AutoTokenizer``; loaded on first use."""

    def __init__(self, name: str) -> None:
        self._name = name
        self._tokenizer: Any = None

    @property
    def name(self) -> str:
        return f"huggingface:{self._name}"

    def _load(self) -> Any:
        if self._tokenizer is None:
            from transformers import AutoTokenizer

            logger.info("Tokenizer: loading {}", self._name)
            self._tokenizer = AutoTokenizer.from_pretrained(self._name)
        return self._tokenizer

    def encode(self, text: str) -> list[int]:
        ids: list[int] = self._load().encode(text, add_special_tokens=False)
        return ids


class RegexSpec(BaseModel):
    kind: Literal["regex"]
    vocab_size: int = Field(default=1 << 20, ge=2)


class HuggingFaceSpec(BaseModel):
    kind: Literal["huggingface"]
    name: str = Field(min_length=1)


TokenizerSpec = Annotated[RegexSpec | HuggingFaceSpec, Field(discriminator="kind")]
_SPEC = TypeAdapter[TokenizerSpec](TokenizerSpec)


def tokenizer_from_spec(spec: RegexSpec | HuggingFaceSpec) -> Tokenizer:
    match spec:
        case RegexSpec():
            return RegexTokenizer(spec.vocab_size)
        case HuggingFaceSpec():
            return HuggingFaceTokenizer(spec.name)


def load_tokenizer(path: Path | None) -> Tokenizer:
    """Build a tokenizer from a spec file; the regex tokenizer when ``path`` is None.

    Raises:
        pydantic.ValidationError: If the spec is malformed
    """
    if path is None:
        return RegexTokenizer()
    return tokenizer_from_spec(_SPEC.validate_json(path.read_bytes()))
