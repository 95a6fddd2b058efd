"""Answer normalization and set-overlap metrics.

Hit is any-overlap between predicted and gold answer sets, not a ranked
Hit@1. Precision/recall/F1 are computed per question and macro-averaged;
pooled (micro) figures are also available for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import DataError


def normalize_answer(s: str) -> str:
    """Trim, collapse internal whitespace, case-fold. Idempotent."""
    return " ".join(s.split()).casefold()


def normalize_set(answers: Iterable[str]) -> set[str]:
    out = set()
    for a in answers:
        n = normalize_answer(a)
        if n:
            out.add(n)
    return out


@dataclass(frozen=True)
class Metrics:
    hit: int
    precision: float
    recall: float
    f1: float


def score_instance(pred: Iterable[str], gold: Iterable[str]) -> Metrics:
    """Overlap metrics for one question. Gold must be non-empty after normalization."""
    pred_set = normalize_set(pred)
    gold_set = normalize_set(gold)
    if not gold_set:
        raise DataError("gold answer set is empty")
    overlap = len(pred_set & gold_set)
    hit = 1 if overlap else 0
    precision = overlap / len(pred_set) if pred_set else 0.0
    recall = overlap / len(gold_set)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return Metrics(hit=hit, precision=precision, recall=recall, f1=f1)


def evaluate_dataset(
    preds: Mapping[str, Iterable[str]], golds: Mapping[str, Iterable[str]]
) -> dict:
    """Aggregate metrics over instances keyed by id.

    Instances are scored in sorted-id order; a missing prediction counts as an
    empty answer set. Macro figures are plain means of per-instance metrics;
    the micro block pools true positives across the dataset.
    """
    if not golds:
        raise DataError("no gold instances to evaluate")
    ids = sorted(golds.keys())
    per_instance: list[Metrics] = []
    tp = pred_total = gold_total = 0
    for iid in ids:
        pred_set = normalize_set(preds.get(iid, ()))
        gold_set = normalize_set(golds[iid])
        m = score_instance(pred_set, gold_set)
        per_instance.append(m)
        tp += len(pred_set & gold_set)
        pred_total += len(pred_set)
        gold_total += len(gold_set)
    n = len(per_instance)
    micro_p = tp / pred_total if pred_total else 0.0
    micro_r = tp / gold_total if gold_total else 0.0
    micro_f1 = (
        0.0 if micro_p + micro_r == 0 else 2 * micro_p * micro_r / (micro_p + micro_r)
    )
    return {
        "count": n,
        "hit": sum(m.hit for m in per_instance) / n,
        "precision": sum(m.precision for m in per_instance) / n,
        "recall": sum(m.recall for m in per_instance) / n,
        "f1": sum(m.f1 for m in per_instance) / n,
        "micro": {"precision": micro_p, "recall": micro_r, "f1": micro_f1},
    }
