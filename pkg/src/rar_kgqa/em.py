"""EM training loop over latent chain/path pairs.

Each iteration samples N candidates per question from the generator, scores
them with the answer model (E-step), keeps the top K, and refits the
generator on the kept set (M-step). Selection uses the joint score
S(z) = logp_gen + logp_ans. Generators are pluggable; every candidate they
emit is re-verified against the graph before entering the pipeline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional, Protocol, Sequence

from .errors import DataError, GenerationError
from .grammar import (
    GraphAwareChain,
    serialize_graph_aware,
    validate_alignment,
)
from .kg import KnowledgeGraph
from .metrics import evaluate_dataset
from .prompts import build_answer_prompt, build_generation_prompt

log = logging.getLogger(__name__)

# A generator gets 3x the requested sample count before we give up on it.
RETRY_FACTOR = 3

CONVERGENCE_EPS = 1e-6
CONVERGENCE_PATIENCE = 2


@dataclass(frozen=True)
class QAInstance:
    id: str
    question: str
    topic_entities: frozenset[str]
    gold_answers: frozenset[str]


def instance_from_record(record: dict) -> QAInstance:
    """Decode one dataset JSON record {"id","question","q_entities","answers"}."""
    if not isinstance(record, dict):
        raise DataError(f"instance record must be an object, got {type(record).__name__}")
    iid = record.get("id")
    question = record.get("question")
    entities = record.get("q_entities")
    answers = record.get("answers")
    if not isinstance(iid, str) or not iid:
        raise DataError("instance 'id' must be a non-empty string")
    if not isinstance(question, str) or not question:
        raise DataError(f"instance {iid!r}: 'question' must be a non-empty string")
    if (
        not isinstance(entities, list)
        or not entities
        or not all(isinstance(e, str) and e for e in entities)
    ):
        raise DataError(f"instance {iid!r}: 'q_entities' must be a non-empty string list")
    if not isinstance(answers, list) or not all(isinstance(a, str) for a in answers):
        raise DataError(f"instance {iid!r}: 'answers' must be a string list")
    return QAInstance(
        id=iid,
        question=question,
        topic_entities=frozenset(entities),
        gold_answers=frozenset(answers),
    )


@dataclass(frozen=True)
class Candidate:
    z: GraphAwareChain
    logp_gen: float
    logp_ans: Optional[float] = None
    score: Optional[float] = None


@dataclass(frozen=True)
class EmConfig:
    n_samples: int = 10
    top_k: int = 3
    iterations: int = 10
    seed: int = 0
    answer_floor_logp: float = math.log(1e-6)
    beam_size: int = 10
    max_triples: int = 3
    resample_after_responser_update: bool = False

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 1 <= self.top_k <= self.n_samples:
            raise ValueError("top_k must satisfy 1 <= top_k <= n_samples")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.answer_floor_logp < 0:
            raise ValueError("answer_floor_logp must be negative")
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_triples < 1:
            raise ValueError("max_triples must be >= 1")


SelectedSet = Sequence[tuple[QAInstance, Sequence[GraphAwareChain]]]


class Generator(Protocol):
    """Samples chain/path candidates and refits itself on a selected set."""

    def propose(
        self, inst: QAInstance, g: KnowledgeGraph, n: int, seed: int
    ) -> list[Candidate]: ...

    def update(self, selected: SelectedSet) -> "Generator": ...

    def digest(self) -> str: ...


class AnswerScorer(Protocol):
    """The answering model's likelihood and prediction interface."""

    def logp_answer(
        self, question: str, z: GraphAwareChain, gold_answers: frozenset[str]
    ) -> float: ...

    def answer(self, question: str, z: GraphAwareChain) -> set[str]: ...


@dataclass(frozen=True)
class TrainingExample:
    prompt: str
    completion: str


@dataclass
class EmState:
    g: KnowledgeGraph
    instances: tuple[QAInstance, ...]
    generator: Generator
    answer_scorer: AnswerScorer
    dev_instances: tuple[QAInstance, ...] = ()
    responser_update: Optional[Callable[[list[TrainingExample]], None]] = None
    threads: int = 1

    def __post_init__(self) -> None:
        if not self.instances:
            raise DataError("no training instances")
        if not self.dev_instances:
            self.dev_instances = self.instances


@dataclass
class EmRun:
    reports: list[dict]
    final_state: EmState


def derive_seed(seed: int, salt: str) -> int:
    """Stable per-instance RNG seed; independent streams per salt."""
    digest = hashlib.sha256(f"{seed}:{salt}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & (2**63 - 1)


def candidate_problems(c: Candidate, g: KnowledgeGraph) -> list[str]:
    """Why a candidate is unacceptable; empty when it is fully graph-backed."""
    problems = [f"{v.kind}: {v.detail}" for v in validate_alignment(c.z)]
    for i, triple in enumerate(c.z.path.triples):
        if not g.has_label_triple(triple):
            problems.append(f"triple {i} {triple!r} is not in the graph")
    if not isinstance(c.logp_gen, float) or math.isnan(c.logp_gen) or c.logp_gen > 0:
        problems.append(f"logp_gen {c.logp_gen!r} is not a log-probability")
    return problems


def sample_candidates(
    gen: Generator, inst: QAInstance, g: KnowledgeGraph, n: int, seed: int
) -> list[Candidate]:
    """Exactly n verified candidates (duplicates permitted), or GenerationError.

    Invalid candidates are dropped and re-requested under a fresh derived seed,
    up to RETRY_FACTOR * n total draws.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    budget = RETRY_FACTOR * n
    collected: list[Candidate] = []
    drawn = 0
    attempt = 0
    while len(collected) < n and drawn < budget:
        need = n - len(collected)
        batch_seed = seed if attempt == 0 else derive_seed(seed, f"retry{attempt}")
        batch = gen.propose(inst, g, need, batch_seed)
        attempt += 1
        drawn += max(len(batch), need)
        for c in batch[:need]:
            problems = candidate_problems(c, g)
            if problems:
                log.debug("rejected candidate for %s: %s", inst.id, "; ".join(problems))
                continue
            collected.append(c)
    if len(collected) < n:
        raise GenerationError(
            f"instance {inst.id!r}: only {len(collected)}/{n} valid candidates "
            f"after {drawn} draws"
        )
    return collected


def score_candidate(sc: AnswerScorer, inst: QAInstance, c: Candidate) -> Candidate:
    logp_ans = sc.logp_answer(inst.question, c.z, inst.gold_answers)
    return replace(c, logp_ans=logp_ans, score=c.logp_gen + logp_ans)


def _tie_key(c: Candidate) -> str:
    return serialize_graph_aware(c.z)


def select_top_k(cands: Sequence[Candidate], k: int) -> list[Candidate]:
    """The k highest-score candidates; exact ties favor the smaller serialized z."""
    if k < 1:
        raise ValueError("k must be >= 1")
    for c in cands:
        if c.score is None:
            raise ValueError("candidates must be scored before selection")
    return sorted(cands, key=lambda c: (-c.score, _tie_key(c)))[:k]


def emit_realigner_dataset(selected: SelectedSet) -> list[TrainingExample]:
    """One generation-prompt example per selected z, completion = serialized z."""
    out = []
    for inst, zs in selected:
        prompt = build_generation_prompt(inst.question, inst.topic_entities)
        for z in zs:
            out.append(TrainingExample(prompt=prompt, completion=serialize_graph_aware(z)))
    return out


def emit_responser_dataset(samples: SelectedSet) -> list[TrainingExample]:
    """One answer-prompt example per sampled z, completion = gold answers by line."""
    out = []
    for inst, zs in samples:
        completion = "\n".join(sorted(inst.gold_answers))
        for z in zs:
            prompt = build_answer_prompt(inst.question, inst.topic_entities, z)
            out.append(TrainingExample(prompt=prompt, completion=completion))
    return out


def _map_instances(state: EmState, fn, instances: Sequence[QAInstance]) -> list:
    if state.threads > 1:
        with ThreadPoolExecutor(max_workers=state.threads) as pool:
            return list(pool.map(fn, instances))
    return [fn(inst) for inst in instances]


def _sample_and_score(
    state: EmState, config: EmConfig, instances: Sequence[QAInstance]
) -> dict[str, list[Candidate]]:
    def per_instance(inst: QAInstance) -> list[Candidate]:
        seed = derive_seed(config.seed, inst.id)
        cands = sample_candidates(state.generator, inst, state.g, config.n_samples, seed)
        return [score_candidate(state.answer_scorer, inst, c) for c in cands]

    results = _map_instances(state, per_instance, instances)
    return {inst.id: cands for inst, cands in zip(instances, results)}


def predict(
    state: EmState, config: EmConfig, inst: QAInstance
) -> set[str]:
    """Inference-time answer: best candidate by generator likelihood, expanded.

    Gold answers play no part here; ties fall back to serialized-z order.
    """
    seed = derive_seed(config.seed, inst.id)
    cands = sample_candidates(state.generator, inst, state.g, config.n_samples, seed)
    best = min(cands, key=lambda c: (-c.logp_gen, serialize_graph_aware(c.z)))
    return state.answer_scorer.answer(inst.question, best.z)


def _dev_report(state: EmState, config: EmConfig) -> dict:
    preds_list = _map_instances(
        state, lambda inst: predict(state, config, inst), state.dev_instances
    )
    preds = {inst.id: p for inst, p in zip(state.dev_instances, preds_list)}
    golds = {inst.id: set(inst.gold_answers) for inst in state.dev_instances}
    return evaluate_dataset(preds, golds)


def _build_report(
    iteration: int,
    state: EmState,
    config: EmConfig,
    samples: dict[str, list[Candidate]],
    selected: dict[str, list[Candidate]],
) -> dict:
    best_scores = {
        inst.id: max(c.score for c in samples[inst.id]) for inst in state.instances
    }
    selected_scores = [c.score for inst in state.instances for c in selected[inst.id]]
    return {
        "iteration": iteration,
        "best_scores": best_scores,
        "mean_best_score": sum(best_scores.values()) / len(best_scores),
        "selected_mean_score": sum(selected_scores) / len(selected_scores),
        "dev": _dev_report(state, config),
        "generator_digest": state.generator.digest(),
    }


def run_iteration(
    state: EmState, config: EmConfig, iteration: int = 1
) -> tuple[EmState, dict]:
    """One EM step: sample, optional answering-model hook, select, refit, report."""
    samples = _sample_and_score(state, config, state.instances)

    if state.responser_update is not None:
        by_inst = [
            (inst, [c.z for c in samples[inst.id]]) for inst in state.instances
        ]
        state.responser_update(emit_responser_dataset(by_inst))
        if config.resample_after_responser_update:
            samples = _sample_and_score(state, config, state.instances)

    selected = {
        inst.id: select_top_k(samples[inst.id], config.top_k)
        for inst in state.instances
    }
    selected_set: list[tuple[QAInstance, Sequence[GraphAwareChain]]] = [
        (inst, [c.z for c in selected[inst.id]]) for inst in state.instances
    ]
    new_state = replace(state, generator=state.generator.update(selected_set))
    report = _build_report(iteration, new_state, config, samples, selected)
    return new_state, report


def run_em(state: EmState, config: EmConfig) -> EmRun:
    """The full loop with a leading no-update baseline report (iteration 0).

    Stops early once mean best score improves by less than CONVERGENCE_EPS for
    CONVERGENCE_PATIENCE consecutive iterations. iterations=0 runs nothing.
    """
    if config.iterations == 0:
        return EmRun(reports=[], final_state=state)

    samples = _sample_and_score(state, config, state.instances)
    selected = {
        inst.id: select_top_k(samples[inst.id], config.top_k)
        for inst in state.instances
    }
    baseline = _build_report(0, state, config, samples, selected)
    reports = [baseline]

    prev_best = baseline["mean_best_score"]
    stall = 0
    for i in range(1, config.iterations + 1):
        state, report = run_iteration(state, config, i)
        reports.append(report)
        improvement = report["mean_best_score"] - prev_best
        prev_best = report["mean_best_score"]
        stall = stall + 1 if improvement < CONVERGENCE_EPS else 0
        if stall >= CONVERGENCE_PATIENCE:
            break
    return EmRun(reports=reports, final_state=state)


def reports_to_jsonl(reports: Iterable[dict]) -> str:
    """Canonical byte form used for report files and determinism checks."""
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in reports)


def dataset_to_jsonl(examples: Iterable[TrainingExample]) -> str:
    return "".join(
        json.dumps({"prompt": e.prompt, "completion": e.completion}, sort_keys=True) + "\n"
        for e in examples
    )


def load_instances(text: str) -> list[QAInstance]:
    """Parse a JSON-lines dataset; blank lines are ignored."""
    instances = []
    seen: set[str] = set()
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {line_no}: invalid JSON: {exc}") from exc
        inst = instance_from_record(record)
        if inst.id in seen:
            raise DataError(f"line {line_no}: duplicate instance id {inst.id!r}")
        seen.add(inst.id)
        instances.append(inst)
    return instances
