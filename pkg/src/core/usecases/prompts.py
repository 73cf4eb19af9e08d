"""Versioned prompt templates for the rollout, the judges and the answer expert.

Judge rubrics are keyed by version so a run configuration pins the exact
wording; ``prompt_hashes`` feeds the run fingerprint.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections.abc import Sequence
from dataclasses import dataclass

from src.core.domain.models import ToolName

ROLLOUT_PROMPT = """\
You are an expert in information seeking and reasoning. You will be given a \
question with an image. You need to collect information for the question step \
by step.
Follow these instructions carefully:
1. If you need external knowledge, call search tools.
2. Enclose your entire reasoning process within <think> ... </think> tags.
3. If you find no further external knowledge needed, stop the search process \
and call the answer model tool.

Each turn must contain exactly one <think> ... </think> block followed by \
exactly one tool call:
<tool_call>{{"name": "<tool name>", "arguments": {{...}}}}</tool_call>
Tool results are returned to you inside <information> ... </information>.

Available tools:
{tool_descriptions}"""

TOOL_DESCRIPTIONS = {
    ToolName.IMAGE_SEARCH: (
        '- image_search: reverse image search. Arguments: {"image": "<image uri>"} '
        "(optional, defaults to the question image). Returns the most similar "
        "image and the titles and URLs of pages containing it."
    ),
    ToolName.TEXT_SEARCH: (
        '- text_search: search a text knowledge source. Arguments: {"query": '
        '"<search query>"}. Returns the most relevant passages.'
    ),
    ToolName.ANSWER_EXPERT: (
        "- answer_expert: hand everything you collected to the answer model, "
        "which writes the final answer. Arguments: {}. This must be your last "
        "tool call."
    ),
}

ANSWER_JUDGE_PROMPT = """\
You are an expert evaluator. You will be given:
- A question
- Several correct (golden) answer candidates
- My provided answer

Your task:
Strictly judge whether my answer is correct compared to the golden answers.

Judgement rules:
1. The meaning of my answer **must match** one of the golden answer candidates.
2. Reject or fail to answer is wrong answer.

Output format:
<reason> The reason of judgement. <Judgement> Yes or No.

Question: {question}
Golden Answer: {candidates}
My Answer: {answer}"""

EXPERT_PROMPT = """\
Answer the question using the information collected by a search agent. The \
agent looked at an image you cannot see; rely on its descriptions of the image.
Reply with the final answer only.

Question: {question}

Collected information:
{history}"""

SOLVER_PROMPT = """\
Answer the question about the image. Reply with the answer only.

Question: {question}"""


@dataclass(frozen=True)
class JudgeRubric:
    """Templates of the retrieval judges for one rubric version."""

    version: str
    image_recognition: str
    hop_support: str
    evidence_validation: str


_RUBRICS = {
    "v1": JudgeRubric(
        version="v1",
        image_recognition="""\
You are grading how a search agent recognized the key entity shown in an image.
You will be given the reference entity and the agent's reasoning.

Classify the agent's visual recognition:
- Correct: the reasoning explicitly names the reference entity (or an \
unambiguous alias of it).
- Cautious: the reasoning does not commit to a name but describes the image \
with hedged, uncertain language, without naming a wrong entity.
- Incorrect: the reasoning names a different entity as the one in the image.

Output format:
<reason> The reason of judgement. <Judgement> Correct or Cautious or Incorrect.

<reference>{reference}</reference>
<reasoning>{reasoning}</reasoning>""",
        hop_support="""\
You are checking whether one fact is supported by the information a search \
agent gathered and reasoned about.

Judgement rules:
1. Answer Yes only if the evidence states the claim or a clear paraphrase of it.
2. Partial or merely related information is not support.

Output format:
<reason> The reason of judgement. <Judgement> Yes or No.

<claim>{claim}</claim>
<evidence>{evidence}</evidence>""",
        evidence_validation="""\
You are validating one fact of a knowledge-graph question against an \
encyclopedia passage from a snapshot dated {snapshot_date}.

Judgement rules:
1. Answer Yes only if the passage supports the claim and the claim is still \
valid at the snapshot date.
2. Otherwise answer No.

Output format:
<reason> The reason of judgement. <Judgement> Yes or No.

<claim>{claim}</claim>
<evidence>{evidence}</evidence>""",
    ),
}

_VERDICT_RE = re.compile(r"<Judgement>\s*:?\s*([A-Za-z]+)", re.IGNORECASE)


def available_rubrics() -> tuple[str, ...]:
    """Rubric versions shipped with the package."""
    return tuple(_RUBRICS)


def judge_rubric(version: str) -> JudgeRubric:
    """Look up a rubric by version.

    Raises:
        ValueError: If the version is unknown
    """
    try:
        return _RUBRICS[version]
    except KeyError:
        msg = f"Unknown rubric version {version!r}; known: {available_rubrics()}"
        raise ValueError(msg) from None


def build_rollout_prompt(enabled_tools: Sequence[ToolName]) -> str:
    """Render the rollout system prompt listing only the enabled tools."""
    descriptions = "\n".join(
        TOOL_DESCRIPTIONS[tool] for tool in ToolName if tool in enabled_tools
    )
    return ROLLOUT_PROMPT.format(tool_descriptions=descriptions)


def format_answer_judge(question: str, candidates: Sequence[str], answer: str) -> str:
    """Fill the answer-judge template."""
    return ANSWER_JUDGE_PROMPT.format(
        question=question,
        candidates=json.dumps(list(candidates), ensure_ascii=False),
        answer=answer,
    )


def parse_verdict(reply: str) -> str | None:
    """Return the lower-cased token after the last ``<Judgement>`` marker."""
    matches = _VERDICT_RE.findall(reply)
    return matches[-1].lower() if matches else None


def prompt_hashes(rubric_version: str) -> dict[str, str]:
    """SHA-256 of every template in use, for run fingerprints."""
    rubric = judge_rubric(rubric_version)
    templates = {
        "rollout": ROLLOUT_PROMPT,
        "answer_judge": ANSWER_JUDGE_PROMPT,
        "expert": EXPERT_PROMPT,
        "solver": SOLVER_PROMPT,
        "image_recognition": rubric.image_recognition,
        "hop_support": rubric.hop_support,
        "evidence_validation": rubric.evidence_validation,
    }
    return {
        name: hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
        for name, text in templates.items()
    }
