"""Shared test utilities: random fixtures, independent oracles, scorer stubs."""

from __future__ import annotations

import hashlib
import math
import random
from pathlib import Path

from rar_kgqa.decoder import PathDecoder, enumerate_valid_paths
from rar_kgqa.expansion import PathTemplate
from rar_kgqa.grammar import GraphAwareChain, KnowledgePath, ReasoningChain
from rar_kgqa.kg import KnowledgeGraph, Triple, build_graph

DATA_DIR = Path(__file__).parent / "data"
GOLDEN_DIR = DATA_DIR / "goldens"
SYNTHETIC_KG = DATA_DIR / "synthetic" / "graph.tsv"
SYNTHETIC_DATASET = DATA_DIR / "synthetic" / "questions.jsonl"

_LABEL_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789_.-"
_STEP_WORDS = ("find", "the", "of", "then", "follow", "edge", "answer", "via")


def random_graph(
    rng: random.Random, max_triples: int = 60, max_relations: int = 6
) -> KnowledgeGraph:
    """A random graph whose out-degree stays small enough to enumerate."""
    n_triples = rng.randint(1, max_triples)
    n_entities = rng.randint(max(3, n_triples // 4), max(4, n_triples + 1))
    n_relations = rng.randint(1, max_relations)
    triples = set()
    for _ in range(n_triples):
        head = f"e{rng.randrange(n_entities)}"
        rel = f"r{rng.randrange(n_relations)}"
        tail = f"e{rng.randrange(n_entities)}"
        triples.add((head, rel, tail))
    return build_graph(sorted(triples))


def random_inpath(
    rng: random.Random, g: KnowledgeGraph, max_len: int = 3
) -> tuple[tuple[str, str, str], ...]:
    """A random connected path of existing triples, 1..max_len hops."""
    starts = sorted(g.out_index)
    current = starts[rng.randrange(len(starts))]
    path = []
    for _ in range(rng.randint(1, max_len)):
        rels = g.relations_from(current)
        if not rels:
            break
        rel = rels[rng.randrange(len(rels))]
        objs = g.objects_of(current, rel)
        tail = objs[rng.randrange(len(objs))]
        path.append(g.label_triple(Triple(current, rel, tail)))
        current = tail
    return tuple(path)


def random_label(rng: random.Random) -> str:
    return "".join(
        rng.choice(_LABEL_CHARS) for _ in range(rng.randint(1, 10))
    )


def random_z(rng: random.Random) -> GraphAwareChain:
    """A structurally valid chain/path pair over throwaway labels."""
    k = rng.randint(1, 3)
    ents = [random_label(rng) for _ in range(k + 1)]
    rels = [random_label(rng) for _ in range(k)]
    triples = tuple((ents[i], rels[i], ents[i + 1]) for i in range(k))
    steps = tuple(
        " ".join(rng.choice(_STEP_WORDS) for _ in range(rng.randint(1, 6)))
        for _ in range(rng.randint(k, k + 2))
    )
    return GraphAwareChain(chain=ReasoningChain(steps), path=KnowledgePath(triples))


class HashScorer:
    """Deterministic pseudo-random continuation scorer.

    Scores depend only on (seed, prefix, symbol), so repeated calls agree and
    different seeds give unrelated distributions. Each allowed set receives a
    proper probability distribution; with inf_every > 0 a hash-chosen subset
    of symbols is excluded outright.
    """

    def __init__(self, seed: int, inf_every: int = 0):
        self.seed = seed
        self.inf_every = inf_every

    def score_continuations(self, prefix, allowed):
        joined = "\x1f".join(prefix)
        weights: dict[str, float | None] = {}
        for sym in allowed:
            digest = hashlib.sha256(
                f"{self.seed}|{joined}|{sym}".encode("utf-8")
            ).digest()
            if self.inf_every and digest[6] % self.inf_every == 0:
                weights[sym] = None
            else:
                weights[sym] = 1 + int.from_bytes(digest[:4], "big") % 997
        total = sum(w for w in weights.values() if w is not None)
        if total == 0:
            return {sym: -math.inf for sym in allowed}
        return {
            sym: (-math.inf if w is None else math.log(w / total))
            for sym, w in weights.items()
        }


def replay_logp(
    g: KnowledgeGraph,
    scorer,
    symbols,
    start_entities=None,
    max_triples: int = 3,
) -> float:
    """Re-run a decoded symbol sequence step by step and sum its step scores."""
    decoder = PathDecoder(g, start_entities=start_entities, max_triples=max_triples)
    state = decoder.initial_state()
    total = 0.0
    for label in symbols:
        allowed_ids = decoder.allowed_continuations(state)
        labels = [decoder.vocab.symbol(i) for i in allowed_ids]
        scores = scorer.score_continuations(state.symbols, labels)
        total += scores[label]
        state = decoder.step(state, allowed_ids[labels.index(label)], scores[label])
    assert state.phase == "done"
    return total


def recompute_cycle_flag(triples) -> bool:
    """Independent cycle check: does any tail revisit an earlier entity?"""
    if not triples:
        return False
    visited = {triples[0][0]}
    cycle = False
    for _, _, tail in triples:
        if tail in visited:
            cycle = True
        visited.add(tail)
    return cycle


def oracle_instantiate(t: PathTemplate, g: KnowledgeGraph) -> set[KnowledgePath]:
    """Brute-force template grounding: filter the full path enumeration."""
    k = len(t.triples)
    prefix = t.triples[:-1]
    final_head, final_rel, _ = t.triples[-1]
    start = t.triples[0][0]
    out = set()
    for path in enumerate_valid_paths(g, start_entities=[start], max_triples=k):
        if len(path) != k or path[:-1] != prefix:
            continue
        if path[-1][0] == final_head and path[-1][1] == final_rel:
            out.add(KnowledgePath(path))
    return out


def oracle_collapse_single_level(triples, cvts) -> set[tuple[str, str, str]]:
    """Cross-product rewrite for mediator sets with no mediator-to-mediator edges."""
    out = set()
    for h, r, t in triples:
        if h not in cvts and t not in cvts:
            out.add((h, r, t))
    for c in cvts:
        incoming = [(h, r) for h, r, t in triples if t == c and h not in cvts]
        outgoing = [(r, t) for h, r, t in triples if h == c and t not in cvts]
        for a, r1 in incoming:
            for r2, b in outgoing:
                out.add((a, f"{r1}-{r2}", b))
    return out


# Fixed evaluation cases: (predicted, gold, hit, precision, recall, f1).
METRIC_CASES = [
    ({"Physician"}, {"physician"}, 1.0, 1.0, 1.0, 1.0),
    (set(), {"x"}, 0.0, 0.0, 0.0, 0.0),
    ({"a", "b"}, {"b", "c"}, 1.0, 0.5, 0.5, 0.5),
    ({"a", "b", "c", "d"}, {"a", "b"}, 1.0, 0.5, 1.0, 2 / 3),
    ({"a"}, {"b"}, 0.0, 0.0, 0.0, 0.0),
    ({" New  York "}, {"new york"}, 1.0, 1.0, 1.0, 1.0),
    ({"A", "a "}, {"a"}, 1.0, 1.0, 1.0, 1.0),
    ({"a"}, {"a", "b", "c"}, 1.0, 1.0, 1 / 3, 0.5),
    ({"x", "y", "z"}, {"x", "y", "z"}, 1.0, 1.0, 1.0, 1.0),
    ({""}, {"q"}, 0.0, 0.0, 0.0, 0.0),
]
