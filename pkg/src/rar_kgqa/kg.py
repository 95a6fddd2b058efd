"""In-memory triple store: loading, CVT collapse, interning, and adjacency indexes.

The store is immutable after construction and safe for concurrent reads.
File format: UTF-8, one ``head<TAB>relation<TAB>tail`` per line, ``#`` comments
and blank lines ignored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import IO, Callable, Iterable, NamedTuple, Optional, Sequence, Union

from .errors import TripleParseError

logger = logging.getLogger(__name__)

CVT_JOIN = "-"

LabelTriple = tuple[str, str, str]


class Triple(NamedTuple):
    """One fact, as interned ids valid in the owning graph."""

    head: int
    relation: int
    tail: int


class _Interner:
    """Dense bijection label <-> id, in first-seen order."""

    def __init__(self) -> None:
        self.labels: list[str] = []
        self.ids: dict[str, int] = {}

    def intern(self, label: str) -> int:
        idx = self.ids.get(label)
        if idx is None:
            idx = len(self.labels)
            self.labels.append(label)
            self.ids[label] = idx
        return idx

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class KnowledgeGraph:
    """Indexed set of (head, relation, tail) triples over interned labels.

    Indexes hold exactly the triples in ``triples``; all adjacency lists are
    sorted ascending by id so iteration order is deterministic. Treat
    instances as immutable after ``load_graph`` returns.
    """

    triples: frozenset[Triple]
    out_index: dict[int, list[tuple[int, int]]]
    rel_index: dict[tuple[int, int], list[int]]
    _entities: _Interner = field(repr=False)
    _relations: _Interner = field(repr=False)

    # -- intern tables ------------------------------------------------

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    @property
    def num_entities(self) -> int:
        return len(self._entities)

    @property
    def num_relations(self) -> int:
        return len(self._relations)

    def entity_id(self, label: str) -> Optional[int]:
        return self._entities.ids.get(label)

    def relation_id(self, label: str) -> Optional[int]:
        return self._relations.ids.get(label)

    def entity_label(self, eid: int) -> str:
        return self._entities.labels[eid]

    def relation_label(self, rid: int) -> str:
        return self._relations.labels[rid]

    def entity_labels(self) -> Sequence[str]:
        return tuple(self._entities.labels)

    def relation_labels(self) -> Sequence[str]:
        return tuple(self._relations.labels)

    # -- adjacency ----------------------------------------------------

    def objects_of(self, head: int, relation: int) -> list[int]:
        """Tails t with (head, relation, t) in the graph, ascending id."""
        return list(self.rel_index.get((head, relation), ()))

    def relations_from(self, head: int) -> list[int]:
        """Distinct relations leaving ``head``, ascending id."""
        seen = sorted({r for r, _ in self.out_index.get(head, ())})
        return seen

    def has_triple(self, t: Triple) -> bool:
        return t in self.triples

    def has_label_triple(self, triple: LabelTriple) -> bool:
        h, r, t = triple
        hid = self.entity_id(h)
        rid = self.relation_id(r)
        tid = self.entity_id(t)
        if hid is None or rid is None or tid is None:
            return False
        return Triple(hid, rid, tid) in self.triples

    def label_triple(self, t: Triple) -> LabelTriple:
        return (
            self.entity_label(t.head),
            self.relation_label(t.relation),
            self.entity_label(t.tail),
        )

    def label_path(self, triples: Iterable[Triple]) -> list[LabelTriple]:
        return [self.label_triple(t) for t in triples]

    def sorted_triples(self) -> list[Triple]:
        """All triples in ascending (head, relation, tail) id order."""
        return sorted(self.triples)


def _iter_decoded_lines(source: Union[str, bytes, IO, Iterable]) -> Iterable[tuple[int, str]]:
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TripleParseError(f"invalid UTF-8 ({exc.reason})", 0) from exc
    if isinstance(source, str):
        source = source.splitlines()
    for line_no, raw in enumerate(source, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise TripleParseError(f"invalid UTF-8 ({exc.reason})", line_no) from exc
        yield line_no, raw


def parse_triple_lines(source: Union[IO, Iterable]) -> list[LabelTriple]:
    """Parse a stream of triple lines into label triples, preserving order.

    Raises TripleParseError on lines that are not blank, not comments, and do
    not contain exactly three non-empty tab-separated fields.
    """
    out: list[LabelTriple] = []
    for line_no, line in _iter_decoded_lines(source):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = line.rstrip("\r\n").split("\t")
        if len(fields) != 3:
            raise TripleParseError(
                f"expected 3 tab-separated fields, got {len(fields)}", line_no
            )
        h, r, t = (f.strip() for f in fields)
        if not h or not r or not t:
            raise TripleParseError("empty field", line_no)
        out.append((h, r, t))
    return out


def collapse_cvt(
    raw_triples: Sequence[LabelTriple], cvt_entities: set[str]
) -> list[LabelTriple]:
    """Rewrite mediator (CVT) nodes into joined binary relations.

    Each incoming edge (a, r1, cvt) paired with each outgoing edge
    (cvt, r2, b) becomes (a, "r1-r2", b). A CVT with edges on only one side
    is dropped with a warning. CVT-to-CVT edges are resolved by repeated
    passes; unresolvable leftovers (cyclic mediators) are dropped.
    """
    triples = list(raw_triples)
    if not cvt_entities:
        return triples

    max_passes = 2 * len(cvt_entities) + 4
    for _ in range(max_passes):
        present = [
            c
            for c in cvt_entities
            if any(h == c or t == c for h, _, t in triples)
        ]
        if not present:
            return triples
        # One mediator per pass, chosen by first appearance for determinism.
        order: dict[str, int] = {}
        for i, (h, _, t) in enumerate(triples):
            for lbl in (h, t):
                if lbl in cvt_entities and lbl not in order:
                    order[lbl] = i
        cvt = min(present, key=lambda c: order[c])

        incoming = [(h, r) for h, r, t in triples if t == cvt and h != cvt]
        outgoing = [(r, t) for h, r, t in triples if h == cvt and t != cvt]
        rest = [trip for trip in triples if trip[0] != cvt and trip[2] != cvt]
        if not incoming or not outgoing:
            dropped = len(triples) - len(rest)
            logger.warning(
                "CVT node %r has no %s edges; dropping %d triple(s)",
                cvt,
                "outgoing" if incoming else "incoming",
                dropped,
            )
            triples = rest
            continue
        products = [
            (a, f"{r1}{CVT_JOIN}{r2}", b)
            for a, r1 in incoming
            for r2, b in outgoing
        ]
        triples = rest + products

    leftover = [
        trip
        for trip in triples
        if trip[0] in cvt_entities or trip[2] in cvt_entities
    ]
    if leftover:
        logger.warning(
            "dropping %d triple(s) on unresolvable CVT cycle", len(leftover)
        )
        triples = [trip for trip in triples if trip not in leftover]
    return triples


def build_graph(label_triples: Iterable[LabelTriple]) -> KnowledgeGraph:
    """Intern and index label triples (duplicates removed, first-seen ids)."""
    entities = _Interner()
    relations = _Interner()
    seen: set[Triple] = set()
    for h, r, t in label_triples:
        trip = Triple(entities.intern(h), relations.intern(r), entities.intern(t))
        seen.add(trip)

    out_index: dict[int, list[tuple[int, int]]] = {}
    rel_index: dict[tuple[int, int], list[int]] = {}
    for trip in sorted(seen):
        out_index.setdefault(trip.head, []).append((trip.relation, trip.tail))
        rel_index.setdefault((trip.head, trip.relation), []).append(trip.tail)
    return KnowledgeGraph(
        triples=frozenset(seen),
        out_index=out_index,
        rel_index=rel_index,
        _entities=entities,
        _relations=relations,
    )


def load_graph(
    source: Union[IO, Iterable],
    cvt_entities: Optional[set[str]] = None,
    cvt_predicate: Optional[Callable[[str], bool]] = None,
) -> KnowledgeGraph:
    """Load a graph from a stream of triple lines (bytes or text).

    CVT mediators may be named explicitly (``cvt_entities``) or detected by a
    label predicate (``cvt_predicate``, e.g. a prefix test); both may be
    combined. Detection is input-driven only.
    """
    label_triples = parse_triple_lines(source)
    cvts = set(cvt_entities or ())
    if cvt_predicate is not None:
        for h, _, t in label_triples:
            for lbl in (h, t):
                if cvt_predicate(lbl):
                    cvts.add(lbl)
    if cvts:
        label_triples = collapse_cvt(label_triples, cvts)
    return build_graph(label_triples)


def load_graph_file(
    path,
    cvt_entities: Optional[set[str]] = None,
    cvt_prefix: Optional[str] = None,
) -> KnowledgeGraph:
    """Load a graph from a triple file; ``cvt_prefix`` marks mediator labels."""
    predicate = None
    if cvt_prefix:
        predicate = lambda label: label.startswith(cvt_prefix)  # noqa: E731
    with open(path, "rb") as fh:
        return load_graph(fh, cvt_entities=cvt_entities, cvt_predicate=predicate)
