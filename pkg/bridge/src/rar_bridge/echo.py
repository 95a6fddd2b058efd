"""Deterministic echo model for protocol conformance testing.

Every op gets a canned, reproducible reply. Invented generation candidates
reference entities that exist in no graph on purpose: engine-side
verification must reject all of them, and the conformance suite checks
exactly that. Run as `python -m rar_bridge.echo` or via the
rar-bridge-echo script.
"""

from __future__ import annotations

import argparse
import json
import math
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .server import OpError, serve

ANSWER_PREFIX = "Therefore, a possible answer could be: "


class EchoModel:
    def __init__(self, serial: bool = False, candidates: Optional[Sequence[dict]] = None):
        self.concurrency = "serial" if serial else "concurrent"
        self.candidates = list(candidates) if candidates else None

    def caps(self) -> dict:
        return {
            "generate": True,
            "score_continuations": True,
            "score_answer": True,
            "consolidate": True,
            "finetune": True,
            "concurrency": self.concurrency,
        }

    def handle(self, op: str, payload: Mapping) -> dict:
        handler = getattr(self, "op_" + op, None)
        if handler is None:
            raise OpError(f"unknown op {op!r}")
        return handler(payload)

    def op_generate(self, payload: Mapping) -> dict:
        n = int(payload.get("n", 1))
        if n < 0:
            raise OpError(f"generate needs n >= 0, got {n}")
        question = str(payload.get("question", ""))
        if self.candidates is not None:
            records = [self.candidates[i % len(self.candidates)] for i in range(n)]
        else:
            records = [self._invent(question, i) for i in range(n)]
        return {"candidates": records}

    @staticmethod
    def _invent(question: str, i: int) -> dict:
        return {
            "chain": [f"Echo step {i + 1} for: {question}"],
            "path": [["EchoHead", "echo-relation", f"EchoTail{i + 1}"]],
            "logp_gen": -float(i + 1),
        }

    def op_score_continuations(self, payload: Mapping) -> dict:
        allowed = payload.get("allowed") or []
        if not allowed:
            return {"scores": {}}
        logp = -math.log(len(allowed))
        return {"scores": {str(symbol): logp for symbol in allowed}}

    def op_score_answer(self, payload: Mapping) -> dict:
        return {"logp": -1.0}

    def op_consolidate(self, payload: Mapping) -> dict:
        prompt = str(payload.get("prompt", ""))
        answers: list[str] = []
        for line in prompt.splitlines():
            cut = line.find(ANSWER_PREFIX)
            if cut < 0:
                continue
            for piece in line[cut + len(ANSWER_PREFIX):].split(","):
                piece = piece.strip().rstrip(".")
                if piece and piece not in answers:
                    answers.append(piece)
        return {"text": "\n".join(answers)}

    def op_finetune(self, payload: Mapping) -> dict:
        return {"ok": True}


def load_candidates(path: str) -> list[dict]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(json.loads(line))
    if not records:
        raise ValueError(f"candidates file {path} holds no records")
    return records


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="rar-bridge-echo",
        description="Deterministic echo model speaking rar-bridge/1 on the standard streams.",
    )
    parser.add_argument(
        "--serial", action="store_true", help="declare serial instead of concurrent capability"
    )
    parser.add_argument(
        "--candidates-file",
        help="JSONL of generate() records to cycle through instead of invented ones",
    )
    args = parser.parse_args(argv)
    candidates = load_candidates(args.candidates_file) if args.candidates_file else None
    serve(EchoModel(serial=args.serial, candidates=candidates))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
