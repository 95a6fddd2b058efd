"""Deterministic mock backend: a closed-form generator and answer scorer.

The generator is a weighted random walk whose per-walk log-probability is
computed in closed form alongside the walk, so sampled frequencies can be
checked against exp(logp_gen) exactly. Its "fine-tune" step is maximum
likelihood on relation counts, which is what makes the EM improvement
assertable without any neural model.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from collections import Counter
from typing import Mapping, Optional, Sequence

from .em import Candidate, QAInstance, SelectedSet
from .errors import GenerationError
from .expansion import expand_answers
from .grammar import GraphAwareChain, KnowledgePath, ReasoningChain
from .kg import KnowledgeGraph
from .metrics import normalize_set


class MockGenerator:
    """Relation-weighted random walker with exact walk log-probabilities.

    Weight of relation r is count(r) + alpha (Laplace smoothing), so a fresh
    generator walks uniformly over available relations. ``update`` replaces
    the counts with those of the selected paths: exact MLE on the M-step set.
    """

    def __init__(
        self,
        counts: Optional[Mapping[str, int]] = None,
        alpha: float = 1.0,
        p_stop: float = 0.5,
        max_triples: int = 3,
    ):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= p_stop <= 1.0:
            raise ValueError("p_stop must be in [0, 1]")
        if max_triples < 1:
            raise ValueError("max_triples must be >= 1")
        self.counts: dict[str, int] = dict(counts or {})
        self.alpha = alpha
        self.p_stop = p_stop
        self.max_triples = max_triples

    def weight(self, relation_label: str) -> float:
        return self.counts.get(relation_label, 0) + self.alpha

    def _walk(
        self, g: KnowledgeGraph, topics: Sequence[int], rng: random.Random
    ) -> Candidate:
        logp = -math.log(len(topics))
        current = topics[rng.randrange(len(topics))]
        steps: list[str] = []
        triples: list[tuple[str, str, str]] = []
        while True:
            head_label = g.entity_label(current)
            rel_ids = g.relations_from(current)
            weights = [self.weight(g.relation_label(r)) for r in rel_ids]
            total = sum(weights)
            pick = rng.random() * total
            cum = 0.0
            chosen = len(rel_ids) - 1
            for i, w in enumerate(weights):
                cum += w
                if pick < cum:
                    chosen = i
                    break
            rel_id = rel_ids[chosen]
            rel_label = g.relation_label(rel_id)
            logp += math.log(weights[chosen] / total)

            objs = g.objects_of(current, rel_id)
            tail = objs[rng.randrange(len(objs))]
            logp -= math.log(len(objs))
            tail_label = g.entity_label(tail)

            steps.append(f"Find the {rel_label} of {head_label}.")
            triples.append((head_label, rel_label, tail_label))

            if len(triples) >= self.max_triples or tail not in g.out_index:
                break  # forced stop: contributes probability 1
            if rng.random() < self.p_stop:
                logp += math.log(self.p_stop)
                break
            logp += math.log(1.0 - self.p_stop)
            current = tail

        z = GraphAwareChain(
            chain=ReasoningChain(tuple(steps)), path=KnowledgePath(tuple(triples))
        )
        return Candidate(z=z, logp_gen=logp)

    def propose(
        self, inst: QAInstance, g: KnowledgeGraph, n: int, seed: int
    ) -> list[Candidate]:
        rng = random.Random(seed)
        topics = []
        for label in sorted(inst.topic_entities):
            eid = g.entity_id(label)
            if eid is not None and eid in g.out_index:
                topics.append(eid)
        if not topics:
            raise GenerationError(
                f"instance {inst.id!r}: no topic entity has outgoing triples"
            )
        return [self._walk(g, topics, rng) for _ in range(n)]

    def update(self, selected: SelectedSet) -> "MockGenerator":
        counts: Counter[str] = Counter()
        for _inst, zs in selected:
            for z in zs:
                for _h, rel, _t in z.path.triples:
                    counts[rel] += 1
        return MockGenerator(
            counts=dict(counts),
            alpha=self.alpha,
            p_stop=self.p_stop,
            max_triples=self.max_triples,
        )

    def digest(self) -> str:
        payload = {
            "alpha": self.alpha,
            "p_stop": self.p_stop,
            "max_triples": self.max_triples,
            "counts": {k: self.counts[k] for k in sorted(self.counts)},
        }
        raw = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(raw).hexdigest()


class MockAnswerScorer:
    """Answers by expanding the path's final hop; likelihood is 0 or a floor.

    A candidate whose expanded answers intersect the gold set gets log-prob 0;
    anything else gets the configured floor, keeping scores finite.
    """

    def __init__(self, g: KnowledgeGraph, floor_logp: float = math.log(1e-6)):
        if not floor_logp < 0:
            raise ValueError("floor_logp must be negative")
        self.g = g
        self.floor_logp = floor_logp

    def answer(self, question: str, z: GraphAwareChain) -> set[str]:
        return expand_answers([z.path], self.g)

    def logp_answer(
        self, question: str, z: GraphAwareChain, gold_answers: frozenset[str]
    ) -> float:
        predicted = normalize_set(self.answer(question, z))
        if predicted & normalize_set(gold_answers):
            return 0.0
        return self.floor_logp


class UniformScorer:
    """Continuation scorer assigning equal probability to every allowed symbol."""

    def score_continuations(
        self, prefix: tuple[str, ...], allowed: Sequence[str]
    ) -> dict[str, float]:
        logp = -math.log(len(allowed))
        return {symbol: logp for symbol in allowed}
