"""Merging K hypothesis answers into a final answer list.

The default consolidator is deterministic score-weighted voting. The prompt
builder targets an external model instead; its byte layout is frozen against
the golden files, and the reply parser reads one answer per line.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .errors import DataError
from .grammar import KnowledgePath, serialize_path

INSTRUCTION = (
    "Based on the reasoning paths, please answer the given question. "
    "Please keep the answer as simple as possible and only return answers. "
    "Please return each answer in a new line."
)


@dataclass(frozen=True)
class Hypothesis:
    path: KnowledgePath
    answers: frozenset[str]
    score: float

    def __post_init__(self) -> None:
        if not self.path.triples:
            raise DataError("hypothesis has an empty path")
        if self.path.connectivity_break() is not None:
            raise DataError("hypothesis path is disconnected")
        if not self.answers:
            raise DataError("hypothesis has no answers")
        if not math.isfinite(self.score):
            raise DataError(f"hypothesis score {self.score!r} is not finite")


def hypothesis_from_record(record: dict) -> Hypothesis:
    """Decode one JSON record {"path": [[h,r,t],...], "answers": [...], "score": x}."""
    if not isinstance(record, dict):
        raise DataError(f"hypothesis record must be an object, got {type(record).__name__}")
    path = record.get("path")
    answers = record.get("answers")
    score = record.get("score")
    if not isinstance(path, list) or not path:
        raise DataError("hypothesis 'path' must be a non-empty list of triples")
    triples = []
    for item in path:
        if (
            not isinstance(item, (list, tuple))
            or len(item) != 3
            or not all(isinstance(x, str) and x for x in item)
        ):
            raise DataError(f"bad path element {item!r}")
        triples.append(tuple(item))
    for i in range(1, len(triples)):
        if triples[i][0] != triples[i - 1][2]:
            raise DataError(f"hypothesis path is disconnected at triple {i}")
    if (
        not isinstance(answers, list)
        or not answers
        or not all(isinstance(a, str) and a for a in answers)
    ):
        raise DataError("hypothesis 'answers' must be a non-empty string list")
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        raise DataError("hypothesis 'score' must be a number")
    return Hypothesis(
        path=KnowledgePath(tuple(triples)),
        answers=frozenset(answers),
        score=float(score),
    )


def load_hypotheses(text: str) -> list[Hypothesis]:
    hyps = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {line_no}: invalid JSON: {exc}") from exc
        hyps.append(hypothesis_from_record(record))
    return hyps


def consolidate_default(hyps: list[Hypothesis]) -> list[tuple[str, float]]:
    """Rank answers by summed exp(score) of their supporting hypotheses.

    fsum makes the weights independent of hypothesis order; exact weight ties
    are ranked alphabetically. All answers are returned; callers truncate.
    """
    if not hyps:
        raise ValueError("cannot consolidate an empty hypothesis list")
    support: dict[str, list[float]] = {}
    for h in hyps:
        for answer in h.answers:
            support.setdefault(answer, []).append(math.exp(h.score))
    weights = {answer: math.fsum(votes) for answer, votes in support.items()}
    return sorted(weights.items(), key=lambda kv: (-kv[1], kv[0]))


def build_consolidation_prompt(question: str, hyps: list[Hypothesis]) -> str:
    """External-consolidator prompt: evidence lines, the question, instructions.

    Hypotheses appear in the given order; multi-answer hypotheses render their
    answers comma-joined in sorted order. Scores are deliberately not shown.
    """
    sections = []
    if hyps:
        lines = ["Relevant triples:"]
        for h in hyps:
            answers = ", ".join(sorted(h.answers))
            lines.append(
                f"{serialize_path(h.path)}. "
                f"Therefore, a possible answer could be: {answers}"
            )
        sections.append("\n".join(lines))
    sections.append(f"Question:\n{question}")
    sections.append(INSTRUCTION)
    return "\n\n".join(sections) + "\n"


def parse_consolidator_reply(text: str) -> list[str]:
    """One answer per non-empty line, trimmed, in reply order."""
    return [line.strip() for line in text.splitlines() if line.strip()]
