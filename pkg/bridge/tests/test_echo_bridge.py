"""Wire-level tests for the echo model.

Each test starts `python -m rar_bridge.echo` and speaks raw line JSON, so
this suite checks exactly what an engine on the other side of the pipe
would observe.
"""

import json
import math
import subprocess
import sys
import time

import pytest

PROTOCOL = "rar-bridge/1"


class Wire:
    def __init__(self, *args):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "rar_bridge.echo", *args],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
        self._next_id = 0

    def send(self, op, **payload):
        self._next_id += 1
        body = {"id": self._next_id, "op": op, **payload}
        self.proc.stdin.write(json.dumps(body) + "\n")
        self.proc.stdin.flush()
        return self._next_id

    def send_raw(self, text):
        self.proc.stdin.write(text + "\n")
        self.proc.stdin.flush()

    def recv(self):
        line = self.proc.stdout.readline()
        assert line, "bridge closed its output stream"
        return json.loads(line)

    def call(self, op, **payload):
        request_id = self.send(op, **payload)
        reply = self.recv()
        assert reply["id"] == request_id
        return reply

    def close(self):
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=5)

    def __enter__(self):
        self.call("hello")
        return self

    def __exit__(self, *exc_info):
        self.close()


@pytest.fixture
def wire():
    bridge = Wire()
    with bridge:
        yield bridge


def test_handshake():
    with Wire() as bridge:
        pass  # __enter__ already asserted the id echo
    bridge = Wire()
    reply = bridge.call("hello")
    assert reply["protocol"] == PROTOCOL
    assert reply["caps"] == {
        "generate": True,
        "score_continuations": True,
        "score_answer": True,
        "consolidate": True,
        "finetune": True,
        "concurrency": "concurrent",
    }
    bridge.close()


def test_serial_flag():
    bridge = Wire("--serial")
    assert bridge.call("hello")["caps"]["concurrency"] == "serial"
    bridge.close()


def test_handshake_is_stable():
    with Wire() as bridge:
        first = bridge.call("hello")["caps"]
        for _ in range(10):
            assert bridge.call("hello")["caps"] == first


def test_generate_is_deterministic_and_off_graph(wire):
    reply = wire.call("generate", question="Q?", topic_entities=[], constraints={}, n=3, seed=7)
    again = wire.call("generate", question="Q?", topic_entities=[], constraints={}, n=3, seed=7)
    assert reply["candidates"] == again["candidates"]
    assert len(reply["candidates"]) == 3
    for i, record in enumerate(reply["candidates"]):
        assert record["chain"] == [f"Echo step {i + 1} for: Q?"]
        assert record["path"] == [["EchoHead", "echo-relation", f"EchoTail{i + 1}"]]
        assert record["logp_gen"] == -(i + 1)


def test_generate_from_candidates_file(tmp_path):
    record = {"chain": ["step"], "path": [["a", "r", "b"]], "logp_gen": -0.5}
    path = tmp_path / "cands.jsonl"
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with Wire("--candidates-file", str(path)) as bridge:
        reply = bridge.call("generate", question="Q?", n=3, seed=0)
    assert reply["candidates"] == [record, record, record]


def test_score_continuations_uniform(wire):
    reply = wire.call("score_continuations", prefix=["<THINK>"], allowed=["a", "b", "c", "d"])
    scores = reply["scores"]
    assert set(scores) == {"a", "b", "c", "d"}
    for value in scores.values():
        assert value == pytest.approx(-math.log(4), abs=1e-12)
    assert wire.call("score_continuations", prefix=[], allowed=[])["scores"] == {}


def test_score_answer(wire):
    reply = wire.call("score_answer", question="Q?", chain=[], path=[], answers=["x"])
    assert reply["logp"] == -1.0


def test_consolidate_extracts_answer_lines(wire):
    prompt = (
        "Question:\nWhere?\n\nRelevant triples:\n"
        "p1. Therefore, a possible answer could be: Mexico\n"
        "p2. Therefore, a possible answer could be: Canada, Mexico\n"
        "\ninstruction text\n"
    )
    reply = wire.call("consolidate", prompt=prompt)
    assert reply["text"] == "Mexico\nCanada"


def test_finetune(wire):
    reply = wire.call("finetune", dataset_path="/tmp/ds.jsonl", kind="generation")
    assert reply["ok"] is True


def test_unknown_op_is_error_reply(wire):
    request_id = wire.send("frobnicate")
    reply = wire.recv()
    assert reply["id"] == request_id
    assert "frobnicate" in reply["error"]
    # the stream survives the error
    assert wire.call("finetune", dataset_path="x", kind="y")["ok"] is True


def test_malformed_line_gets_null_id_error(wire):
    wire.send_raw("not json at all")
    reply = wire.recv()
    assert reply["id"] is None
    assert "JSON" in reply["error"]
    wire.send_raw(json.dumps({"op": "hello"}))  # id missing
    reply = wire.recv()
    assert reply["id"] is None
    assert "integer 'id'" in reply["error"]


def test_handler_exception_stays_request_local(wire):
    request_id = wire.send("generate", n="many")
    reply = wire.recv()
    assert reply["id"] == request_id
    assert "error" in reply
    assert wire.call("score_answer")["logp"] == -1.0


def test_out_of_order_replies_when_concurrent(wire):
    slow = wire.send("finetune", dataset_path="x", kind="y", delay_ms=400)
    fast = wire.send("finetune", dataset_path="x", kind="y")
    first, second = wire.recv(), wire.recv()
    assert first["id"] == fast
    assert second["id"] == slow


def test_serial_bridge_keeps_request_order():
    with Wire("--serial") as bridge:
        slow = bridge.send("finetune", dataset_path="x", kind="y", delay_ms=200)
        fast = bridge.send("finetune", dataset_path="x", kind="y")
        first, second = bridge.recv(), bridge.recv()
    assert first["id"] == slow
    assert second["id"] == fast


def test_concurrent_requests_overlap_in_time(wire):
    started = time.monotonic()
    for _ in range(4):
        wire.send("finetune", dataset_path="x", kind="y", delay_ms=250)
    for _ in range(4):
        wire.recv()
    elapsed = time.monotonic() - started
    # four overlapping 250 ms sleeps must beat a serial 1 s floor
    assert elapsed < 0.9


def test_eof_shuts_down_cleanly():
    bridge = Wire()
    bridge.call("hello")
    bridge.proc.stdin.close()
    assert bridge.proc.wait(timeout=5) == 0
