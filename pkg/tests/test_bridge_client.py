"""Engine-side adapters driving the real echo bridge process.

Skipped wholesale when the rar-bridge package is not installed; nothing
else in the suite needs a bridge.
"""

import importlib.util
import json
import math
import sys
import time

import pytest

from rar_kgqa.bridge import (
    BridgeAnswerScorer,
    BridgeConsolidator,
    BridgeGenerator,
    BridgeScorer,
    BridgeSession,
)
from rar_kgqa.cli import main
from rar_kgqa.consolidation import Hypothesis
from rar_kgqa.decoder import decode_beam
from rar_kgqa.em import (
    QAInstance,
    candidate_problems,
    sample_candidates,
    score_candidate,
)
from rar_kgqa.errors import BridgeOpError, GenerationError
from rar_kgqa.grammar import KnowledgePath, parse_candidate_record
from rar_kgqa.mock import UniformScorer

pytestmark = pytest.mark.skipif(
    importlib.util.find_spec("rar_bridge") is None,
    reason="rar-bridge package not installed",
)

ECHO = [sys.executable, "-m", "rar_bridge.echo"]

US_INSTANCE = QAInstance(
    id="us1",
    question="Which countries border the United States?",
    topic_entities=frozenset({"US"}),
    gold_answers=frozenset({"Mexico", "Canada"}),
)

VALID_RECORD = {
    "chain": ["Find the borders of US."],
    "path": [["US", "borders", "Mexico"]],
    "logp_gen": -0.7,
}


@pytest.fixture
def echo_session():
    with BridgeSession(ECHO) as session:
        yield session


@pytest.fixture
def scripted_session(tmp_path):
    path = tmp_path / "cands.jsonl"
    path.write_text(json.dumps(VALID_RECORD) + "\n", encoding="utf-8")
    with BridgeSession(ECHO + ["--candidates-file", str(path)]) as session:
        yield session


def test_echo_handshake(echo_session):
    assert echo_session.caps == {op: True for op in echo_session.caps}
    assert echo_session.concurrency == "concurrent"


def test_echo_serial_flag():
    with BridgeSession(ECHO + ["--serial"]) as session:
        assert session.concurrency == "serial"


def test_unknown_op_is_op_error(echo_session):
    with pytest.raises(BridgeOpError, match="unknown op"):
        echo_session.call("does-not-exist", {})


def test_hallucinated_candidates_all_rejected(echo_session, us_graph):
    gen = BridgeGenerator(echo_session)
    candidates = gen.propose(US_INSTANCE, us_graph, n=20, seed=5)
    assert len(candidates) == 20
    rejected = sum(1 for c in candidates if candidate_problems(c, us_graph))
    assert rejected == 20


def test_sampling_from_hallucinating_bridge_fails_closed(echo_session, us_graph):
    gen = BridgeGenerator(echo_session)
    with pytest.raises(GenerationError):
        sample_candidates(gen, US_INSTANCE, us_graph, n=4, seed=0)


def test_scripted_candidates_are_accepted(scripted_session, us_graph):
    gen = BridgeGenerator(scripted_session)
    candidates = sample_candidates(gen, US_INSTANCE, us_graph, n=4, seed=0)
    assert len(candidates) == 4
    for c in candidates:
        assert candidate_problems(c, us_graph) == []
        assert c.logp_gen == -0.7
        assert c.z.path.triples == (("US", "borders", "Mexico"),)


def test_answer_scorer_expands_engine_side(echo_session, us_graph):
    scorer = BridgeAnswerScorer(echo_session, us_graph)
    z, _ = parse_candidate_record(VALID_RECORD)
    assert scorer.answer(US_INSTANCE.question, z) == {"Canada", "Mexico"}
    logp = scorer.logp_answer(US_INSTANCE.question, z, US_INSTANCE.gold_answers)
    assert logp == -1.0


def test_answer_scorer_applies_floor(echo_session, us_graph):
    scorer = BridgeAnswerScorer(echo_session, us_graph, floor_logp=-0.5)
    z, _ = parse_candidate_record(VALID_RECORD)
    assert scorer.logp_answer("Q?", z, frozenset({"x"})) == -0.5


def test_bridge_scorer_matches_uniform_decode(echo_session, us_graph):
    via_bridge = decode_beam(us_graph, BridgeScorer(echo_session), ["US"], beam_size=10)
    local = decode_beam(us_graph, UniformScorer(), ["US"], beam_size=10)
    assert [(s.triples, s.logp) for s in via_bridge.sequences] == [
        (s.triples, s.logp) for s in local.sequences
    ]


def test_bridge_consolidator_round_trip(echo_session):
    hyps = [
        Hypothesis(
            path=KnowledgePath((("US", "borders", "Mexico"),)),
            answers=frozenset({"Mexico"}),
            score=-1.0,
        ),
        Hypothesis(
            path=KnowledgePath((("US", "borders", "Canada"),)),
            answers=frozenset({"Canada"}),
            score=-2.0,
        ),
    ]
    answers = BridgeConsolidator(echo_session).consolidate("Which countries?", hyps)
    assert answers == ["Mexico", "Canada"]


def test_generator_update_triggers_finetune(scripted_session, us_graph, tmp_path):
    gen = BridgeGenerator(scripted_session, dataset_dir=tmp_path)
    z, _ = parse_candidate_record(VALID_RECORD)
    before = gen.digest()
    gen.update([(US_INSTANCE, [z])])
    assert gen.digest() != before
    dataset = tmp_path / "realigner_dataset_001.jsonl"
    assert dataset.exists()
    record = json.loads(dataset.read_text(encoding="utf-8").splitlines()[0])
    assert set(record) == {"completion", "prompt"}


def test_concurrent_pipelining_overlaps(echo_session):
    started = time.monotonic()
    ids = [
        echo_session.submit("finetune", {"dataset_path": "x", "kind": "y", "delay_ms": 250})
        for _ in range(4)
    ]
    for request_id in ids:
        assert echo_session.collect(request_id)["ok"] is True
    # four overlapping 250 ms sleeps must beat a serial 1 s floor
    assert time.monotonic() - started < 0.9


def test_out_of_order_collection(echo_session):
    slow = echo_session.submit("finetune", {"dataset_path": "x", "kind": "y", "delay_ms": 400})
    fast = echo_session.submit("finetune", {"dataset_path": "x", "kind": "y"})
    started = time.monotonic()
    assert echo_session.collect(fast)["ok"] is True
    fast_latency = time.monotonic() - started
    assert echo_session.collect(slow)["ok"] is True
    assert fast_latency < 0.3


# -- through the CLI --------------------------------------------------------


def us_task_files(tmp_path):
    kg = tmp_path / "kg.tsv"
    kg.write_text("US\tborders\tMexico\nUS\tborders\tCanada\n", encoding="utf-8")
    dataset = tmp_path / "qa.jsonl"
    dataset.write_text(
        json.dumps(
            {
                "id": "us1",
                "question": US_INSTANCE.question,
                "q_entities": ["US"],
                "answers": ["Mexico", "Canada"],
            }
        )
        + "\n",
        encoding="utf-8",
    )
    return kg, dataset


def test_cli_em_run_with_bridge(tmp_path, capsys):
    kg, dataset = us_task_files(tmp_path)
    cands = tmp_path / "cands.jsonl"
    cands.write_text(json.dumps(VALID_RECORD) + "\n", encoding="utf-8")
    out_dir = tmp_path / "run"
    code = main(
        [
            "em-run",
            "--kg",
            str(kg),
            "--dataset",
            str(dataset),
            "--bridge-cmd",
            f"{sys.executable} -m rar_bridge.echo --candidates-file {cands}",
            "--n-samples",
            "2",
            "--top-k",
            "1",
            "--iterations",
            "1",
            "--out-dir",
            str(out_dir),
        ]
    )
    out = capsys.readouterr().out
    assert code == 0
    summary = json.loads(out.splitlines()[1])
    assert summary["final_hit"] == 1.0
    assert (out_dir / "reports.jsonl").exists()
    assert (out_dir / "realigner_dataset_001.jsonl").exists()


def test_cli_em_run_with_hallucinating_bridge_fails(tmp_path, capsys):
    kg, dataset = us_task_files(tmp_path)
    code = main(
        [
            "em-run",
            "--kg",
            str(kg),
            "--dataset",
            str(dataset),
            "--bridge-cmd",
            " ".join(ECHO),
            "--iterations",
            "1",
        ]
    )
    capsys.readouterr()
    assert code == 2


def test_cli_consolidate_with_bridge(tmp_path, capsys):
    hyps = tmp_path / "hyps.jsonl"
    hyps.write_text(
        json.dumps(
            {"path": [["US", "borders", "Mexico"]], "answers": ["Mexico"], "score": -1.0}
        )
        + "\n"
        + json.dumps(
            {"path": [["US", "borders", "Canada"]], "answers": ["Canada"], "score": -2.0}
        )
        + "\n",
        encoding="utf-8",
    )
    code = main(
        [
            "consolidate",
            "--in",
            str(hyps),
            "--question",
            "Which countries border the US?",
            "--bridge-cmd",
            " ".join(ECHO),
        ]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert json.loads(out.splitlines()[1]) == {"answers": ["Mexico", "Canada"]}


def test_cli_consolidate_bridge_needs_question(tmp_path, capsys):
    hyps = tmp_path / "hyps.jsonl"
    hyps.write_text(
        json.dumps(
            {"path": [["US", "borders", "Mexico"]], "answers": ["Mexico"], "score": -1.0}
        )
        + "\n",
        encoding="utf-8",
    )
    code = main(["consolidate", "--in", str(hyps), "--bridge-cmd", " ".join(ECHO)])
    capsys.readouterr()
    assert code == 1


def test_floor_must_be_negative(echo_session, us_graph):
    with pytest.raises(ValueError):
        BridgeAnswerScorer(echo_session, us_graph, floor_logp=0.0)


def test_score_decomposition_with_bridge(scripted_session, us_graph):
    gen = BridgeGenerator(scripted_session)
    scorer = BridgeAnswerScorer(scripted_session, us_graph)
    cands = sample_candidates(gen, US_INSTANCE, us_graph, n=3, seed=1)
    for c in cands:
        scored = score_candidate(scorer, US_INSTANCE, c)
        assert scored.score == scored.logp_gen + scored.logp_ans
        assert scored.logp_ans == -1.0
        assert math.isfinite(scored.score)
