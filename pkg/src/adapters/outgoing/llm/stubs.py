"""Deterministic stand-ins for the judge, answer expert and solver.

They are pure functions of their input, which makes reward and evaluation
runs exactly reproducible offline.
"""

from __future__ import annotations

import json
import re

from src.core.domain.graph import CandidateQuestion

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_STOPWORDS = frozenset(
    "a an and are as at be been by for from in is it its of on s that the this to "
    "was were which with".split()
)
# words mapped to one canonical form so paraphrased evidence still entails a claim
_PARAPHRASES = {
    "designed": "design",
    "designer": "design",
    "architect": "design",
    "built": "build",
    "constructed": "build",
    "builder": "build",
    "born": "birth",
    "birthplace": "birth",
    "native": "birth",
    "located": "locate",
    "situated": "locate",
    "lies": "locate",
    "founded": "found",
    "founder": "found",
    "established": "found",
    "created": "create",
    "creator": "create",
    "authored": "create",
    "named": "name",
    "namesake": "name",
    "honours": "name",
    "honors": "name",
    "flows": "flow",
    "runs": "flow",
}
_HEDGES = (
    "appears",
    "seems",
    "looks like",
    "possibly",
    "perhaps",
    "uncertain",
    "not sure",
    "might be",
    "could be",
    "likely",
)


def normalize(text: str) -> str:
    """Case-fold and keep alphanumeric tokens separated by single spaces."""
    return " ".join(_TOKEN_RE.findall(text.casefold()))


def _contains(haystack: str, needle: str) -> bool:
    needle = normalize(needle)
    return bool(needle) and f" {needle} " in f" {normalize(haystack)} "


def _content_tokens(text: str) -> set[str]:
    return {
        _PARAPHRASES.get(token, token)
        for token in _TOKEN_RE.findall(text.casefold())
        if token not in _STOPWORDS
    }


def _tag(prompt: str, name: str) -> str | None:
    match = re.search(rf"<{name}>(.*?)</{name}>", prompt, re.DOTALL)
    return match.group(1) if match else None


def _line(prompt: str, prefix: str) -> str | None:
    for line in prompt.splitlines():
        if line.startswith(prefix):
            return line[len(prefix) :].strip()
    return None


def _reply(verdict: str, reason: str) -> str:
    return f"<reason> {reason} <Judgement> {verdict}"


class RuleBasedJudge:
    """Answers every rubric with a fixed rule.

    * answer: Yes when a golden candidate occurs in the answer as whole words
    * image recognition: Correct when the reasoning names the reference,
      Cautious when it hedges, Incorrect otherwise
    * hop support and evidence validation: Yes when every content word of the
      claim (after paraphrase folding) occurs in the evidence
    """

    async def complete(self, prompt: str) -> str:
        return self.judge(prompt)

    def judge(self, prompt: str) -> str:
        candidates_line = _line(prompt, "Golden Answer:")
        answer = _line(prompt, "My Answer:")
        if candidates_line is not None and answer is not None:
            candidates = json.loads(candidates_line)
            hit = any(_contains(answer, c) for c in candidates)
            return _reply("Yes" if hit else "No", "candidate containment")

        reference, reasoning = _tag(prompt, "reference"), _tag(prompt, "reasoning")
        if reference is not None and reasoning is not None:
            if _contains(reasoning, reference):
                return _reply("Correct", "reference named")
            lowered = reasoning.casefold()
            if any(hedge in lowered for hedge in _HEDGES):
                return _reply("Cautious", "hedged description")
            return _reply("Incorrect", "reference not named")

        claim, evidence = _tag(prompt, "claim"), _tag(prompt, "evidence")
        if claim is not None and evidence is not None:
            supported = _content_tokens(claim) <= _content_tokens(evidence)
            return _reply("Yes" if supported else "No", "claim words in evidence")

        return "<reason> unrecognized prompt"


class ConstantAnswerGenerator:
    """Always returns the same answer."""

    def __init__(self, answer: str) -> None:
        self.answer = answer

    async def generate(self, prompt: str) -> str:
        return self.answer

    async def ping(self) -> None:
        return None


class EchoLastChunkGenerator:
    """Answers with the last retrieved line of the expert prompt.

    Lines starting with ``- `` in the collected information are retrieved
    text; the last one wins. Blank when nothing was retrieved.
    """

    async def generate(self, prompt: str) -> str:
        retrieved = [line[2:] for line in prompt.splitlines() if line.startswith("- ")]
        return retrieved[-1] if retrieved else ""

    async def ping(self) -> None:
        return None


class ConstantSolver:
    """Solver that always gives the same answer."""

    def __init__(self, answer: str) -> None:
        self.answer = answer

    async def solve(self, question: CandidateQuestion) -> str:
        return self.answer
