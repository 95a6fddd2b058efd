"""Prompt construction for the generation and answering models.

The byte layout of these prompts is frozen: training datasets and the golden
files under tests/data/goldens are built from them, so any change here is a
format break, not a refactor.
"""

from __future__ import annotations

from typing import Iterable

from .grammar import (
    ALIGN_HEADER,
    THINKING_HEADER,
    GraphAwareChain,
    serialize_chain,
    serialize_path,
)

INSTRUCTION = (
    "Generate a step-by-step thinking process for the given question. "
    "Ensure the thinking process is aligned with triples in the knowledge base."
)

SUMMARY_HEADER = "Summarization:"


def render_entities(entities: Iterable[str]) -> str:
    """One entity label per line, sorted so set-valued inputs render stably."""
    return "\n".join(sorted(entities))


def build_generation_prompt(question: str, query_entities: Iterable[str]) -> str:
    """Prompt whose completion is the two-section chain/path block."""
    return (
        f"{INSTRUCTION}\n"
        "\n"
        "Question:\n"
        f"{question}\n"
        "\n"
        "Query entities:\n"
        f"{render_entities(query_entities)}\n"
    )


def build_answer_prompt(
    question: str, query_entities: Iterable[str], z: GraphAwareChain
) -> str:
    """Prompt whose completion is the final answer, one answer per line."""
    return (
        f"{INSTRUCTION}\n"
        "\n"
        "Question:\n"
        f"{question}\n"
        "\n"
        "Query entities:\n"
        f"{render_entities(query_entities)}\n"
        "\n"
        f"{THINKING_HEADER}\n"
        f"{serialize_chain(z.chain)}\n"
        "\n"
        f"{ALIGN_HEADER}\n"
        f"{serialize_path(z.path)}\n"
        "\n"
        f"{SUMMARY_HEADER}\n"
    )
