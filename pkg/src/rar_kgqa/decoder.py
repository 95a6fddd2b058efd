"""Graph-constrained path decoding.

The decoder walks a small automaton whose continuations are restricted to
symbols that can always be completed into a path of triples present in the
graph. Decoding is exact best-first search: step scores are log-probs (<= 0),
so uniform-cost order pops complete sequences in global score order and the
first ``beam_size`` completions are the true top-k.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Protocol, Sequence

from .errors import ConstraintViolation, DataError, ScorerContractError
from .grammar import ALIGN_CLOSE, RESERVED_MARKERS, TRIPLE_OPEN
from .kg import KnowledgeGraph, LabelTriple, Triple

PHASE_START = "start"
PHASE_HEAD = "head"
PHASE_RELATION = "relation"
PHASE_TAIL = "tail"
PHASE_TRIPLE_DONE = "triple_done"
PHASE_DONE = "done"

# Positive step scores up to this slack are clamped to 0; anything larger is a
# contract violation. Keeps search admissible against rounding in remote scorers.
_SCORE_SLACK = 1e-9


class ContinuationScorer(Protocol):
    """Scores the allowed continuations of a decode prefix.

    Must return a mapping whose keys are exactly ``allowed`` and whose values
    are log-probabilities (-inf allowed, meaning "never take this").
    """

    def score_continuations(
        self, prefix: tuple[str, ...], allowed: Sequence[str]
    ) -> Mapping[str, float]: ...


class Vocabulary:
    """Stable symbol ids: reserved markers first, then entities, then relations."""

    def __init__(self, g: KnowledgeGraph):
        for label in g.entity_labels() + g.relation_labels():
            if label in RESERVED_MARKERS:
                raise DataError(f"graph label {label!r} collides with a reserved marker")
        self._g = g
        self._offset_entities = len(RESERVED_MARKERS)
        self._offset_relations = self._offset_entities + g.num_entities

    @property
    def size(self) -> int:
        return self._offset_relations + self._g.num_relations

    def marker_id(self, marker: str) -> int:
        return RESERVED_MARKERS.index(marker)

    def entity_symbol_id(self, entity_id: int) -> int:
        return self._offset_entities + entity_id

    def relation_symbol_id(self, relation_id: int) -> int:
        return self._offset_relations + relation_id

    def symbol(self, symbol_id: int) -> str:
        if symbol_id < 0 or symbol_id >= self.size:
            raise DataError(f"symbol id {symbol_id} out of range")
        if symbol_id < self._offset_entities:
            return RESERVED_MARKERS[symbol_id]
        if symbol_id < self._offset_relations:
            return self._g.entity_label(symbol_id - self._offset_entities)
        return self._g.relation_label(symbol_id - self._offset_relations)

    def is_entity(self, symbol_id: int) -> bool:
        return self._offset_entities <= symbol_id < self._offset_relations

    def is_relation(self, symbol_id: int) -> bool:
        return self._offset_relations <= symbol_id < self.size

    def entity_of(self, symbol_id: int) -> int:
        if not self.is_entity(symbol_id):
            raise DataError(f"symbol id {symbol_id} is not an entity")
        return symbol_id - self._offset_entities

    def relation_of(self, symbol_id: int) -> int:
        if not self.is_relation(symbol_id):
            raise DataError(f"symbol id {symbol_id} is not a relation")
        return symbol_id - self._offset_relations


@dataclass(frozen=True)
class DecodeState:
    phase: str = PHASE_START
    triples: tuple[Triple, ...] = ()
    pending_head: Optional[int] = None
    pending_relation: Optional[int] = None
    symbols: tuple[str, ...] = ()
    logp: float = 0.0
    visited: frozenset[int] = frozenset()
    has_cycle: bool = False

    @property
    def last_tail(self) -> Optional[int]:
        return self.triples[-1].tail if self.triples else None


@dataclass(frozen=True)
class DecodedPath:
    symbols: tuple[str, ...]
    triples: tuple[LabelTriple, ...]
    logp: float
    has_cycle: bool


@dataclass
class DecodeDiagnostics:
    no_path: bool = False
    dead_ends: int = 0
    states_expanded: int = 0
    notes: list[str] = field(default_factory=list)


@dataclass
class DecodeResult:
    sequences: list[DecodedPath]
    diagnostics: DecodeDiagnostics


class PathDecoder:
    """Automaton over one graph with optional start-entity and hop constraints.

    ``start_entities`` restricts the head of the first triple (labels not in
    the graph are ignored; an unusable start set simply yields no paths).
    ``max_triples`` caps path length; the minimum decodable path is 1 triple.
    """

    def __init__(
        self,
        g: KnowledgeGraph,
        start_entities: Optional[Iterable[str]] = None,
        max_triples: int = 3,
    ):
        if max_triples < 1:
            raise ValueError("max_triples must be >= 1")
        self.g = g
        self.vocab = Vocabulary(g)
        self.max_triples = max_triples
        if start_entities is None:
            self.start_ids: Optional[frozenset[int]] = None
        else:
            ids = set()
            for label in start_entities:
                eid = g.entity_id(label)
                if eid is not None:
                    ids.add(eid)
            self.start_ids = frozenset(ids)

    def initial_state(self) -> DecodeState:
        return DecodeState()

    def _viable(self, entity_id: int) -> bool:
        return entity_id in self.g.out_index

    def _start_heads(self) -> list[int]:
        if self.start_ids is None:
            candidates = self.g.out_index.keys()
        else:
            candidates = self.start_ids
        return [e for e in candidates if self._viable(e)]

    def allowed_continuations(self, state: DecodeState) -> list[int]:
        """Symbol ids legal after ``state``, sorted by their symbol string.

        Every returned id extends to at least one complete in-graph path, so
        search never needs to back out of an allowed choice.
        """
        g, vocab = self.g, self.vocab
        if state.phase == PHASE_START:
            if not self._start_heads():
                return []
            ids = [vocab.marker_id(TRIPLE_OPEN)]
        elif state.phase == PHASE_HEAD:
            if state.triples:
                heads = [state.last_tail]
            else:
                heads = self._start_heads()
            ids = [vocab.entity_symbol_id(e) for e in heads]
        elif state.phase == PHASE_RELATION:
            assert state.pending_head is not None
            ids = [
                vocab.relation_symbol_id(r)
                for r in g.relations_from(state.pending_head)
            ]
        elif state.phase == PHASE_TAIL:
            assert state.pending_head is not None and state.pending_relation is not None
            ids = [
                vocab.entity_symbol_id(t)
                for t in g.objects_of(state.pending_head, state.pending_relation)
            ]
        elif state.phase == PHASE_TRIPLE_DONE:
            ids = [vocab.marker_id(ALIGN_CLOSE)]
            tail = state.last_tail
            if len(state.triples) < self.max_triples and tail is not None and self._viable(tail):
                ids.append(vocab.marker_id(TRIPLE_OPEN))
        elif state.phase == PHASE_DONE:
            return []
        else:
            raise DataError(f"unknown phase {state.phase!r}")
        return sorted(ids, key=self.vocab.symbol)

    def step(self, state: DecodeState, symbol_id: int, logp: float = 0.0) -> DecodeState:
        if symbol_id not in self.allowed_continuations(state):
            raise ConstraintViolation(
                f"symbol {self.vocab.symbol(symbol_id)!r} (id {symbol_id}) is not "
                f"allowed in phase {state.phase!r}"
            )
        vocab = self.vocab
        label = vocab.symbol(symbol_id)
        symbols = state.symbols + (label,)
        new_logp = state.logp + logp

        if state.phase in (PHASE_START, PHASE_TRIPLE_DONE) and label == TRIPLE_OPEN:
            return DecodeState(
                phase=PHASE_HEAD,
                triples=state.triples,
                symbols=symbols,
                logp=new_logp,
                visited=state.visited,
                has_cycle=state.has_cycle,
            )
        if state.phase == PHASE_TRIPLE_DONE and label == ALIGN_CLOSE:
            return DecodeState(
                phase=PHASE_DONE,
                triples=state.triples,
                symbols=symbols,
                logp=new_logp,
                visited=state.visited,
                has_cycle=state.has_cycle,
            )
        if state.phase == PHASE_HEAD:
            head = vocab.entity_of(symbol_id)
            visited = state.visited if state.triples else state.visited | {head}
            return DecodeState(
                phase=PHASE_RELATION,
                triples=state.triples,
                pending_head=head,
                symbols=symbols,
                logp=new_logp,
                visited=visited,
                has_cycle=state.has_cycle,
            )
        if state.phase == PHASE_RELATION:
            return DecodeState(
                phase=PHASE_TAIL,
                triples=state.triples,
                pending_head=state.pending_head,
                pending_relation=vocab.relation_of(symbol_id),
                symbols=symbols,
                logp=new_logp,
                visited=state.visited,
                has_cycle=state.has_cycle,
            )
        if state.phase == PHASE_TAIL:
            tail = vocab.entity_of(symbol_id)
            assert state.pending_head is not None and state.pending_relation is not None
            triple = Triple(state.pending_head, state.pending_relation, tail)
            return DecodeState(
                phase=PHASE_TRIPLE_DONE,
                triples=state.triples + (triple,),
                symbols=symbols,
                logp=new_logp,
                visited=state.visited | {tail},
                has_cycle=state.has_cycle or tail in state.visited,
            )
        raise ConstraintViolation(f"no transition from phase {state.phase!r}")

    def label_triples(self, state: DecodeState) -> tuple[LabelTriple, ...]:
        return tuple(self.g.label_triple(t) for t in state.triples)


def _validate_scores(
    allowed: Sequence[str], scores: Mapping[str, float]
) -> dict[str, float]:
    if set(scores.keys()) != set(allowed):
        missing = sorted(set(allowed) - set(scores.keys()))
        extra = sorted(set(scores.keys()) - set(allowed))
        raise ScorerContractError(
            f"scorer keys must match the allowed set exactly "
            f"(missing {missing!r}, extra {extra!r})"
        )
    out: dict[str, float] = {}
    total = 0.0
    for symbol, value in scores.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScorerContractError(f"score for {symbol!r} is not a number: {value!r}")
        value = float(value)
        if math.isnan(value):
            raise ScorerContractError(f"score for {symbol!r} is NaN")
        if value > _SCORE_SLACK:
            raise ScorerContractError(
                f"score for {symbol!r} is a positive log-prob: {value!r}"
            )
        if value > 0.0:
            value = 0.0
        out[symbol] = value
        if value != -math.inf:
            total += math.exp(value)
    if total > 1.0 + _SCORE_SLACK:
        raise ScorerContractError(f"continuation probabilities sum to {total!r} > 1")
    return out


def decode_beam(
    g: KnowledgeGraph,
    scorer: ContinuationScorer,
    start_entities: Optional[Iterable[str]] = None,
    beam_size: int = 10,
    max_triples: int = 3,
) -> DecodeResult:
    """Exact top-``beam_size`` complete paths under the scorer.

    Sequences come back sorted by log-prob descending; exact ties are ordered
    by their symbol tuples. Every returned triple exists in the graph.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    decoder = PathDecoder(g, start_entities=start_entities, max_triples=max_triples)
    diagnostics = DecodeDiagnostics()
    results: list[DecodedPath] = []

    start = decoder.initial_state()
    heap: list[tuple[float, tuple[str, ...], DecodeState]] = [(0.0, (), start)]
    while heap and len(results) < beam_size:
        cost, _, state = heapq.heappop(heap)
        diagnostics.states_expanded += 1
        if state.phase == PHASE_DONE:
            results.append(
                DecodedPath(
                    symbols=state.symbols,
                    triples=decoder.label_triples(state),
                    logp=state.logp,
                    has_cycle=state.has_cycle,
                )
            )
            continue
        allowed_ids = decoder.allowed_continuations(state)
        if not allowed_ids:
            diagnostics.dead_ends += 1
            continue
        allowed_labels = [decoder.vocab.symbol(i) for i in allowed_ids]
        scores = _validate_scores(
            allowed_labels, scorer.score_continuations(state.symbols, allowed_labels)
        )
        pushed = 0
        for symbol_id, label in zip(allowed_ids, allowed_labels):
            logp = scores[label]
            if logp == -math.inf:
                continue
            child = decoder.step(state, symbol_id, logp)
            heapq.heappush(heap, (-child.logp, child.symbols, child))
            pushed += 1
        if pushed == 0:
            diagnostics.dead_ends += 1

    if not results:
        diagnostics.no_path = True
        diagnostics.notes.append("no complete path reachable from the start set")
    return DecodeResult(sequences=results, diagnostics=diagnostics)


def enumerate_valid_paths(
    g: KnowledgeGraph,
    start_entities: Optional[Iterable[str]] = None,
    max_triples: int = 3,
) -> list[tuple[LabelTriple, ...]]:
    """All connected in-graph paths of 1..max_triples hops, lexicographically sorted.

    Written as a direct graph walk, independent of the decode automaton, so the
    two implementations can check each other.
    """
    if max_triples < 1:
        raise ValueError("max_triples must be >= 1")
    if start_entities is None:
        starts = sorted(g.out_index.keys(), key=g.entity_label)
    else:
        ids = {g.entity_id(label) for label in start_entities}
        starts = sorted(
            (e for e in ids if e is not None and e in g.out_index),
            key=g.entity_label,
        )
    paths: list[tuple[LabelTriple, ...]] = []

    def walk(head: int, prefix: tuple[LabelTriple, ...]) -> None:
        for rel in g.relations_from(head):
            for tail in g.objects_of(head, rel):
                triple = g.label_triple(Triple(head, rel, tail))
                extended = prefix + (triple,)
                paths.append(extended)
                if len(extended) < max_triples:
                    walk(tail, extended)

    for start in starts:
        walk(start, ())
    paths.sort()
    return paths
