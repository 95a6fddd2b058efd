"""Command-line entry point.

Every subcommand prints JSON lines starting with a schema-version record, so
outputs are machine-checkable and stable for golden tests. Exit codes: 0 on
success, 1 on usage errors, 2 on data or engine errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Optional

from . import em as em_mod
from .bridge import (
    BridgeAnswerScorer,
    BridgeConsolidator,
    BridgeGenerator,
    session_from_env,
)
from .consolidation import (
    Hypothesis,
    consolidate_default,
    build_consolidation_prompt,
    load_hypotheses,
)
from .decoder import decode_beam
from .errors import DataError, EngineError
from .expansion import abstract_terminal, expand_answers, instantiate
from .grammar import serialize_graph_aware, serialize_path
from .kg import load_graph_file
from .metrics import evaluate_dataset
from .mock import MockAnswerScorer, MockGenerator, UniformScorer
from .prompts import build_answer_prompt, build_generation_prompt

SCHEMA_RECORD = {"schema": "rar-cli/1"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _emit(records: list[dict]) -> None:
    for record in [SCHEMA_RECORD, *records]:
        sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")


def _load_graph(args: argparse.Namespace):
    return load_graph_file(args.kg, cvt_prefix=getattr(args, "cvt_prefix", None))


def cmd_load_check(args: argparse.Namespace) -> int:
    g = _load_graph(args)
    _emit(
        [
            {
                "triples": g.num_triples,
                "entities": g.num_entities,
                "relations": g.num_relations,
            }
        ]
    )
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    g = _load_graph(args)
    result = decode_beam(
        g,
        UniformScorer(),
        start_entities=args.start_entity or None,
        beam_size=args.beam_size,
        max_triples=args.max_hops,
    )
    records: list[dict] = [
        {
            "triples": [list(t) for t in seq.triples],
            "logp": seq.logp,
            "symbols": list(seq.symbols),
            "has_cycle": seq.has_cycle,
        }
        for seq in result.sequences
    ]
    d = result.diagnostics
    records.append(
        {
            "diagnostics": {
                "no_path": d.no_path,
                "dead_ends": d.dead_ends,
                "states_expanded": d.states_expanded,
                "notes": d.notes,
            }
        }
    )
    _emit(records)
    return 0


def cmd_expand(args: argparse.Namespace) -> int:
    g = _load_graph(args)
    try:
        data = json.loads(Path(args.path_json).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.path_json}: invalid JSON: {exc}") from exc
    if isinstance(data, dict) and "path" in data:
        data = data["path"]
    if not isinstance(data, list) or not data:
        raise DataError("path file must hold a non-empty list of [head, relation, tail]")
    triples = []
    for item in data:
        if (
            not isinstance(item, (list, tuple))
            or len(item) != 3
            or not all(isinstance(x, str) and x for x in item)
        ):
            raise DataError(f"bad path element {item!r}")
        triples.append(tuple(item))
    template = abstract_terminal(triples)
    instances = sorted(instantiate(template, g), key=lambda p: p.triples)
    answers = sorted(expand_answers([triples], g))
    _emit(
        [
            {"template": [list(t) for t in template.triples]},
            {"instances": [[list(t) for t in p.triples] for p in instances]},
            {"answers": answers},
        ]
    )
    return 0


def _em_config(args: argparse.Namespace) -> em_mod.EmConfig:
    try:
        return em_mod.EmConfig(
            n_samples=args.n_samples,
            top_k=args.top_k,
            iterations=args.iterations,
            seed=args.seed,
            answer_floor_logp=args.answer_floor_logp,
            beam_size=args.beam_size,
            max_triples=args.max_hops,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_em_run(args: argparse.Namespace) -> int:
    g = _load_graph(args)
    instances = em_mod.load_instances(Path(args.dataset).read_text(encoding="utf-8"))
    if not instances:
        raise DataError(f"{args.dataset}: dataset is empty")
    dev = ()
    if args.dev:
        dev = tuple(em_mod.load_instances(Path(args.dev).read_text(encoding="utf-8")))
    config = _em_config(args)
    out_dir: Optional[Path] = Path(args.out_dir) if args.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    session = session_from_env(args.bridge_cmd)
    try:
        if session is not None:
            generator = BridgeGenerator(
                session, max_triples=config.max_triples, dataset_dir=out_dir
            )
            scorer = BridgeAnswerScorer(session, g, floor_logp=config.answer_floor_logp)
        else:
            generator = MockGenerator(
                p_stop=args.p_stop, max_triples=config.max_triples
            )
            scorer = MockAnswerScorer(g, floor_logp=config.answer_floor_logp)
        state = em_mod.EmState(
            g=g,
            instances=tuple(instances),
            generator=generator,
            answer_scorer=scorer,
            dev_instances=dev,
            threads=args.threads,
        )
        run = em_mod.run_em(state, config)
        reports_text = em_mod.reports_to_jsonl(run.reports)

        if out_dir is not None:
            (out_dir / "reports.jsonl").write_text(reports_text, encoding="utf-8")
            final = run.final_state
            samples = {}
            for inst in final.instances:
                seed = em_mod.derive_seed(config.seed, inst.id)
                cands = em_mod.sample_candidates(
                    final.generator, inst, g, config.n_samples, seed
                )
                samples[inst.id] = [
                    em_mod.score_candidate(final.answer_scorer, inst, c) for c in cands
                ]
            sampled_set = [
                (inst, [c.z for c in samples[inst.id]]) for inst in final.instances
            ]
            selected_set = [
                (inst, [c.z for c in em_mod.select_top_k(samples[inst.id], config.top_k)])
                for inst in final.instances
            ]
            (out_dir / "realigner_dataset.jsonl").write_text(
                em_mod.dataset_to_jsonl(em_mod.emit_realigner_dataset(selected_set)),
                encoding="utf-8",
            )
            (out_dir / "responser_dataset.jsonl").write_text(
                em_mod.dataset_to_jsonl(em_mod.emit_responser_dataset(sampled_set)),
                encoding="utf-8",
            )
            summary = {
                "reports": str(out_dir / "reports.jsonl"),
                "iterations_run": max(r["iteration"] for r in run.reports)
                if run.reports
                else 0,
                "initial_hit": run.reports[0]["dev"]["hit"] if run.reports else None,
                "final_hit": run.reports[-1]["dev"]["hit"] if run.reports else None,
            }
            _emit([summary])
        else:
            _emit(run.reports)
    finally:
        if session is not None:
            session.close()
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    golds = {
        inst.id: set(inst.gold_answers)
        for inst in em_mod.load_instances(Path(args.gold).read_text(encoding="utf-8"))
    }
    preds: dict[str, list[str]] = {}
    for line_no, line in enumerate(
        Path(args.pred).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.pred}:{line_no}: invalid JSON: {exc}") from exc
        if (
            not isinstance(record, dict)
            or not isinstance(record.get("id"), str)
            or not isinstance(record.get("answers"), list)
        ):
            raise DataError(f"{args.pred}:{line_no}: expected {{'id','answers'}}")
        preds[record["id"]] = [str(a) for a in record["answers"]]
    _emit([evaluate_dataset(preds, golds)])
    return 0


def cmd_consolidate(args: argparse.Namespace) -> int:
    hyps = load_hypotheses(Path(args.input).read_text(encoding="utf-8"))
    if not hyps:
        raise DataError(f"{args.input}: no hypotheses")
    ranked_hyps = sorted(hyps, key=lambda h: (-h.score, serialize_path(h.path)))
    session = session_from_env(args.bridge_cmd)
    try:
        if session is not None:
            if not args.question:
                raise UsageError("--question is required with a bridge consolidator")
            answers = BridgeConsolidator(session).consolidate(args.question, ranked_hyps)
            _emit([{"answers": answers}])
        else:
            ranked = consolidate_default(hyps)
            _emit([{"answer": a, "weight": w} for a, w in ranked])
    finally:
        if session is not None:
            session.close()
    return 0


def cmd_emit_prompts(args: argparse.Namespace) -> int:
    g = _load_graph(args)
    instances = em_mod.load_instances(Path(args.dataset).read_text(encoding="utf-8"))
    if not instances:
        raise DataError(f"{args.dataset}: dataset is empty")
    if args.instance:
        matches = [i for i in instances if i.id == args.instance]
        if not matches:
            raise DataError(f"instance {args.instance!r} not found in {args.dataset}")
        inst = matches[0]
    else:
        inst = instances[0]
    config = _em_config(args)

    generator = MockGenerator(p_stop=args.p_stop, max_triples=config.max_triples)
    scorer = MockAnswerScorer(g, floor_logp=config.answer_floor_logp)
    seed = em_mod.derive_seed(config.seed, inst.id)
    cands = em_mod.sample_candidates(generator, inst, g, config.n_samples, seed)
    scored = [em_mod.score_candidate(scorer, inst, c) for c in cands]
    best = min(scored, key=lambda c: (-c.logp_gen, serialize_graph_aware(c.z)))
    selected = em_mod.select_top_k(scored, config.top_k)
    hyps = [
        Hypothesis(
            path=c.z.path,
            answers=frozenset(scorer.answer(inst.question, c.z)),
            score=c.score,
        )
        for c in selected
    ]

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "generation_prompt.txt": build_generation_prompt(
            inst.question, inst.topic_entities
        ),
        "response_prompt.txt": build_answer_prompt(
            inst.question, inst.topic_entities, best.z
        ),
        "consolidation_prompt.txt": build_consolidation_prompt(inst.question, hyps),
    }
    for name, content in files.items():
        (out_dir / name).write_text(content, encoding="utf-8")
    _emit([{"instance": inst.id, "written": sorted(files)}])
    return 0


def _add_kg_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--kg", required=True, help="triple file (head<TAB>relation<TAB>tail)")
    parser.add_argument(
        "--cvt-prefix",
        help="label prefix marking mediator entities to collapse into joined relations",
    )


def _add_em_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-samples", type=int, default=10)
    parser.add_argument("--top-k", type=int, default=3)
    parser.add_argument("--iterations", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--beam-size", type=int, default=10)
    parser.add_argument("--max-hops", type=int, default=3)
    parser.add_argument("--p-stop", type=float, default=0.5)
    parser.add_argument(
        "--answer-floor-logp",
        type=float,
        default=math.log(1e-6),
        help="log-likelihood assigned to candidates that miss every gold answer",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("load-check", parents=[], help="load a graph and print counts")
    _add_kg_arg(p)
    p.set_defaults(func=cmd_load_check)

    p = sub.add_parser("decode", help="top-k constrained path decoding (uniform scorer)")
    _add_kg_arg(p)
    p.add_argument("--start-entity", action="append", help="repeatable start entity label")
    p.add_argument("--beam-size", type=int, default=10)
    p.add_argument("--max-hops", type=int, default=3)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("expand", help="expand a path's final hop against the graph")
    _add_kg_arg(p)
    p.add_argument("--path-json", required=True, help="JSON file with [[h,r,t],...]")
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("em-run", help="run the EM training loop")
    _add_kg_arg(p)
    p.add_argument("--dataset", required=True, help="JSON-lines QA dataset")
    p.add_argument("--dev", help="optional dev dataset (defaults to the training set)")
    _add_em_args(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", help="write reports and datasets here instead of stdout")
    p.add_argument("--bridge-cmd", help="external model bridge command (or RAR_BRIDGE_CMD)")
    p.set_defaults(func=cmd_em_run)

    p = sub.add_parser("eval", help="score predictions against gold answers")
    p.add_argument("--pred", required=True, help="JSON lines {'id','answers'}")
    p.add_argument("--gold", required=True, help="JSON-lines QA dataset")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("consolidate", help="merge hypothesis answers into a ranking")
    p.add_argument("--in", dest="input", required=True, help="JSON-lines hypotheses")
    p.add_argument("--question", help="question text (required with --bridge-cmd)")
    p.add_argument("--bridge-cmd", help="external consolidator bridge command")
    p.set_defaults(func=cmd_consolidate)

    p = sub.add_parser("emit-prompts", help="write prompt files for one instance")
    _add_kg_arg(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--instance", help="instance id (default: first in the dataset)")
    p.add_argument("--out-dir", required=True)
    _add_em_args(p)
    p.set_defaults(func=cmd_emit_prompts)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
