"""Terminal expansion of knowledge paths.

A decoded path pins one concrete answer entity. Abstracting the final tail to
a variable and re-instantiating it against the graph recovers every entity
reachable through the same final (head, relation), so multi-answer questions
do not collapse to whichever tail the decoder happened to sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .errors import TemplateError
from .grammar import KnowledgePath
from .kg import KnowledgeGraph, LabelTriple

VARIABLE = "?x"

PathLike = Union[KnowledgePath, Sequence[LabelTriple]]


@dataclass(frozen=True)
class PathTemplate:
    """A path whose final tail is the placeholder ``?x``; all else is concrete."""

    triples: tuple[LabelTriple, ...]

    def __len__(self) -> int:
        return len(self.triples)

    @property
    def final_head(self) -> str:
        return self.triples[-1][0]

    @property
    def final_relation(self) -> str:
        return self.triples[-1][1]


def _as_triples(path: PathLike) -> tuple[LabelTriple, ...]:
    if isinstance(path, KnowledgePath):
        return path.triples
    return tuple((h, r, t) for h, r, t in path)


def abstract_terminal(path: PathLike) -> PathTemplate:
    """Replace the final tail with ``?x``; earlier triples are untouched."""
    triples = _as_triples(path)
    if not triples:
        raise ValueError("cannot abstract an empty path")
    for i in range(1, len(triples)):
        if triples[i][0] != triples[i - 1][2]:
            raise ValueError(
                f"path is disconnected at triple {i}: head {triples[i][0]!r} "
                f"does not match previous tail {triples[i - 1][2]!r}"
            )
    head, relation, _ = triples[-1]
    return PathTemplate(triples[:-1] + ((head, relation, VARIABLE),))


def _check_template(t: PathTemplate, g: KnowledgeGraph) -> None:
    if not t.triples:
        raise TemplateError("template has no triples")
    for i, triple in enumerate(t.triples[:-1]):
        if VARIABLE in triple:
            raise TemplateError(f"variable outside the final tail at triple {i}")
        if not g.has_label_triple(triple):
            raise TemplateError(f"template prefix triple {triple!r} is not in the graph")
        if i > 0 and triple[0] != t.triples[i - 1][2]:
            raise TemplateError(f"template prefix is disconnected at triple {i}")
    head, relation, tail = t.triples[-1]
    if tail != VARIABLE:
        raise TemplateError(f"final tail must be {VARIABLE!r}, got {tail!r}")
    if head == VARIABLE or relation == VARIABLE:
        raise TemplateError("variable outside the final tail in the last triple")
    if len(t.triples) > 1 and head != t.triples[-2][2]:
        raise TemplateError("final head does not chain onto the template prefix")
    if g.entity_id(head) is None:
        raise TemplateError(f"final head {head!r} is not an entity in the graph")


def instantiate(t: PathTemplate, g: KnowledgeGraph) -> set[KnowledgePath]:
    """All groundings of ``?x`` via objects_of(final head, final relation).

    A final relation with zero objects yields the empty set; a template whose
    concrete part is not a connected in-graph path is an error.
    """
    _check_template(t, g)
    head_id = g.entity_id(t.final_head)
    rel_id = g.relation_id(t.final_relation)
    assert head_id is not None
    if rel_id is None:
        return set()
    prefix = t.triples[:-1]
    head, relation = t.final_head, t.final_relation
    return {
        KnowledgePath(prefix + ((head, relation, g.entity_label(tail)),))
        for tail in g.objects_of(head_id, rel_id)
    }


def expand_answers(paths: Iterable[PathLike], g: KnowledgeGraph) -> set[str]:
    """Union of final-tail labels over all groundings of all given paths.

    Empty input gives the empty set. Each path must be valid in the graph;
    the paths' own final tails are then always included.
    """
    answers: set[str] = set()
    for path in paths:
        template = abstract_terminal(path)
        for grounded in instantiate(template, g):
            answers.add(grounded.triples[-1][2])
    return answers
