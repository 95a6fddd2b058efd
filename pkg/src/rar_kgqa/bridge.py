"""Client for external model processes speaking the line-JSON bridge protocol.

One JSON object per line in each direction over the child's standard streams.
Every request carries an integer id; replies echo it, and a bridge declaring
concurrent capability may answer out of order. The bridge is untrusted: its
candidates and scores are re-verified by the engine before use.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import queue
import shlex
import subprocess
import threading
import time
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .consolidation import Hypothesis, build_consolidation_prompt, parse_consolidator_reply
from .em import (
    Candidate,
    QAInstance,
    SelectedSet,
    dataset_to_jsonl,
    emit_realigner_dataset,
)
from .errors import BridgeError, BridgeOpError
from .expansion import expand_answers
from .grammar import GraphAwareChain, parse_candidate_record
from .kg import KnowledgeGraph

PROTOCOL = "rar-bridge/1"
HANDSHAKE_TIMEOUT = 30.0

OP_CAPS = ("generate", "score_continuations", "score_answer", "consolidate", "finetune")

_EOF = object()


class BridgeSession:
    """Owns one bridge child process: handshake, request/reply, shutdown.

    The handshake runs in the constructor; a session that fails to negotiate
    terminates the child and raises, so no other op can reach an unverified
    bridge. Use as a context manager or call close().
    """

    def __init__(self, cmd: str | Sequence[str], timeout: float = HANDSHAKE_TIMEOUT):
        argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        if not argv:
            raise BridgeError("empty bridge command")
        self.timeout = timeout
        self._next_id = 0
        self._pending: dict[int, dict] = {}
        self._lock = threading.Lock()
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise BridgeError(f"failed to start bridge {argv!r}: {exc}") from exc
        self._queue: "queue.Queue[object]" = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        try:
            reply = self.call("hello", {})
            protocol = reply.get("protocol")
            if protocol != PROTOCOL:
                raise BridgeError(f"unsupported bridge protocol {protocol!r}")
            caps = reply.get("caps")
            if not isinstance(caps, dict):
                raise BridgeError("handshake reply is missing 'caps'")
            self.caps = {op: bool(caps.get(op)) for op in OP_CAPS}
            concurrency = caps.get("concurrency", "serial")
            if concurrency not in ("serial", "concurrent"):
                raise BridgeError(f"bad concurrency capability {concurrency!r}")
            self.concurrency = concurrency
        except BridgeError:
            self.close()
            raise

    # -- transport ---------------------------------------------------------

    def _read_loop(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._queue.put(line)
        self._queue.put(_EOF)

    def submit(self, op: str, payload: Mapping) -> int:
        """Send one request without waiting; returns its id for collect()."""
        if self._proc.stdin is None or self._proc.poll() is not None:
            raise BridgeError("bridge process is not running")
        with self._lock:
            self._next_id += 1
            request_id = self._next_id
        body = {"id": request_id, "op": op, **payload}
        try:
            self._proc.stdin.write(json.dumps(body) + "\n")
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise BridgeError(f"failed to send {op!r} request: {exc}") from exc
        return request_id

    def collect(self, request_id: int, timeout: Optional[float] = None) -> dict:
        """Wait for the reply with the given id; buffers out-of-order replies."""
        deadline = time.monotonic() + (self.timeout if timeout is None else timeout)
        while True:
            if request_id in self._pending:
                return self._finish(self._pending.pop(request_id))
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self.close()
                raise BridgeError(f"timed out waiting for reply {request_id}")
            try:
                item = self._queue.get(timeout=remaining)
            except queue.Empty:
                self.close()
                raise BridgeError(f"timed out waiting for reply {request_id}")
            if item is _EOF:
                self.close()
                raise BridgeError("bridge closed its output stream")
            try:
                reply = json.loads(item)
            except json.JSONDecodeError as exc:
                self.close()
                raise BridgeError(f"bridge sent a non-JSON line: {item!r}") from exc
            if not isinstance(reply, dict):
                self.close()
                raise BridgeError(f"bridge reply is not an object: {reply!r}")
            if reply.get("id") == request_id:
                return self._finish(reply)
            other = reply.get("id")
            if isinstance(other, int):
                self._pending[other] = reply
            # replies with a null/alien id are reported when someone waits on them

    def _finish(self, reply: dict) -> dict:
        if "error" in reply:
            raise BridgeOpError(str(reply["error"]))
        return reply

    def call(self, op: str, payload: Mapping, timeout: Optional[float] = None) -> dict:
        return self.collect(self.submit(op, payload), timeout)

    def require(self, op: str) -> None:
        if not self.caps.get(op):
            raise BridgeError(f"bridge does not support op {op!r}")

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        if proc.stdin is not None:
            try:
                proc.stdin.close()
            except OSError:
                pass
        try:
            proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self) -> "BridgeSession":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # -- ops ---------------------------------------------------------------

    def generate(
        self,
        question: str,
        topic_entities: Sequence[str],
        constraints: Mapping,
        n: int,
        seed: int,
    ) -> list[dict]:
        self.require("generate")
        reply = self.call(
            "generate",
            {
                "question": question,
                "topic_entities": list(topic_entities),
                "constraints": dict(constraints),
                "n": n,
                "seed": seed,
            },
        )
        candidates = reply.get("candidates")
        if not isinstance(candidates, list):
            raise BridgeOpError("generate reply is missing 'candidates'")
        return candidates

    def score_continuations(
        self, prefix: Sequence[str], allowed: Sequence[str]
    ) -> dict:
        self.require("score_continuations")
        reply = self.call(
            "score_continuations", {"prefix": list(prefix), "allowed": list(allowed)}
        )
        scores = reply.get("scores")
        if not isinstance(scores, dict):
            raise BridgeOpError("score_continuations reply is missing 'scores'")
        return scores

    def score_answer(
        self,
        question: str,
        chain: Sequence[str],
        path: Sequence[Sequence[str]],
        answers: Sequence[str],
    ) -> float:
        self.require("score_answer")
        reply = self.call(
            "score_answer",
            {
                "question": question,
                "chain": list(chain),
                "path": [list(t) for t in path],
                "answers": list(answers),
            },
        )
        logp = reply.get("logp")
        if isinstance(logp, bool) or not isinstance(logp, (int, float)):
            raise BridgeOpError(f"score_answer reply 'logp' is not a number: {logp!r}")
        return float(logp)

    def consolidate(self, prompt: str) -> str:
        self.require("consolidate")
        reply = self.call("consolidate", {"prompt": prompt})
        text = reply.get("text")
        if not isinstance(text, str):
            raise BridgeOpError("consolidate reply is missing 'text'")
        return text

    def finetune(self, dataset_path: str, kind: str) -> bool:
        self.require("finetune")
        reply = self.call("finetune", {"dataset_path": dataset_path, "kind": kind})
        return bool(reply.get("ok"))


# -- engine-side adapters ---------------------------------------------------


class BridgeGenerator:
    """Generator backed by a bridge; candidates are verified by the harness."""

    def __init__(
        self,
        session: BridgeSession,
        max_triples: int = 3,
        dataset_dir: Optional[Path] = None,
    ):
        self.session = session
        self.max_triples = max_triples
        self.dataset_dir = Path(dataset_dir) if dataset_dir is not None else None
        self._updates = 0
        self._digest = "bridge-initial"

    def propose(
        self, inst: QAInstance, g: KnowledgeGraph, n: int, seed: int
    ) -> list[Candidate]:
        records = self.session.generate(
            question=inst.question,
            topic_entities=sorted(inst.topic_entities),
            constraints={
                "max_triples": self.max_triples,
                "start_entities": sorted(inst.topic_entities),
            },
            n=n,
            seed=seed,
        )
        out = []
        for record in records:
            z, logp_gen = parse_candidate_record(record)
            out.append(Candidate(z=z, logp_gen=logp_gen))
        return out

    def update(self, selected: SelectedSet) -> "BridgeGenerator":
        examples = emit_realigner_dataset(selected)
        payload = dataset_to_jsonl(examples)
        self._updates += 1
        self._digest = hashlib.sha256(payload.encode("utf-8")).hexdigest()
        if self.session.caps.get("finetune"):
            directory = self.dataset_dir or Path(os.getcwd())
            path = directory / f"realigner_dataset_{self._updates:03d}.jsonl"
            path.write_text(payload, encoding="utf-8")
            self.session.finetune(str(path), kind="generation")
        return self

    def digest(self) -> str:
        return self._digest


class BridgeAnswerScorer:
    """Answer scorer that delegates the likelihood to a bridge.

    Prediction stays engine-side (terminal expansion of the path), so a wild
    bridge can misrank candidates but never inject an off-graph answer.
    """

    def __init__(
        self,
        session: BridgeSession,
        g: KnowledgeGraph,
        floor_logp: float = math.log(1e-6),
    ):
        if not floor_logp < 0:
            raise ValueError("floor_logp must be negative")
        self.session = session
        self.g = g
        self.floor_logp = floor_logp

    def answer(self, question: str, z: GraphAwareChain) -> set[str]:
        return expand_answers([z.path], self.g)

    def logp_answer(
        self, question: str, z: GraphAwareChain, gold_answers: frozenset[str]
    ) -> float:
        value = self.session.score_answer(
            question=question,
            chain=list(z.chain.steps),
            path=list(z.path.triples),
            answers=sorted(gold_answers),
        )
        if math.isnan(value):
            raise BridgeOpError("score_answer returned NaN")
        if value > 0:
            raise BridgeOpError(f"score_answer returned a positive log-prob: {value!r}")
        return max(value, self.floor_logp)


class BridgeScorer:
    """Continuation scorer passthrough; decode_beam enforces the contract."""

    def __init__(self, session: BridgeSession):
        self.session = session

    def score_continuations(
        self, prefix: tuple[str, ...], allowed: Sequence[str]
    ) -> Mapping[str, float]:
        return self.session.score_continuations(prefix, allowed)


class BridgeConsolidator:
    def __init__(self, session: BridgeSession):
        self.session = session

    def consolidate(self, question: str, hyps: Iterable[Hypothesis]) -> list[str]:
        prompt = build_consolidation_prompt(question, list(hyps))
        return parse_consolidator_reply(self.session.consolidate(prompt))


def session_from_env(
    cmd: Optional[str] = None, timeout: float = HANDSHAKE_TIMEOUT
) -> Optional[BridgeSession]:
    """Open a session from an explicit command or RAR_BRIDGE_CMD; None if neither."""
    chosen = cmd or os.environ.get("RAR_BRIDGE_CMD")
    if not chosen:
        return None
    return BridgeSession(chosen, timeout=timeout)
