"""Request loop for bridge model processes.

One JSON object per line in each direction on the standard streams. Every
request carries an integer id and an op name; the reply echoes the id.
Failures inside a handler become {"id", "error"} replies so a bad request
never kills the stream. A model declaring concurrent capability gets each
request on its own thread; the reply writer stays line-atomic behind a
lock, which is what lets replies leave out of order without interleaving.
"""

from __future__ import annotations

import json
import sys
import threading
import time
from typing import Mapping, Protocol

PROTOCOL = "rar-bridge/1"


class OpError(Exception):
    """Raised by a handler to answer the current request with an error."""


class Model(Protocol):
    def caps(self) -> dict: ...

    def handle(self, op: str, payload: Mapping) -> dict: ...


class _Responder:
    def __init__(self, stream):
        self._stream = stream
        self._lock = threading.Lock()

    def send(self, obj: Mapping) -> None:
        line = json.dumps(obj)
        with self._lock:
            self._stream.write(line + "\n")
            self._stream.flush()


def serve(model: Model, stdin=None, stdout=None) -> int:
    """Answer requests until the input stream closes; returns the request count."""
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    out = _Responder(stdout)
    concurrent = model.caps().get("concurrency") == "concurrent"
    workers: list[threading.Thread] = []
    handled = 0
    for raw in stdin:
        raw = raw.strip()
        if not raw:
            continue
        handled += 1
        try:
            request = json.loads(raw)
        except json.JSONDecodeError as exc:
            out.send({"id": None, "error": f"request is not valid JSON: {exc}"})
            continue
        if not isinstance(request, dict) or not isinstance(request.get("id"), int):
            out.send({"id": None, "error": "request must be an object with an integer 'id'"})
            continue
        if concurrent and request.get("op") != "hello":
            worker = threading.Thread(target=_answer, args=(model, request, out))
            worker.start()
            workers.append(worker)
        else:
            # hello is answered inline so capabilities are settled before
            # any pipelined request can overtake the handshake
            _answer(model, request, out)
    for worker in workers:
        worker.join()
    return handled


def _answer(model: Model, request: dict, out: _Responder) -> None:
    request_id = request["id"]
    payload = {k: v for k, v in request.items() if k not in ("id", "op")}
    delay_ms = payload.pop("delay_ms", 0)
    if delay_ms:
        time.sleep(float(delay_ms) / 1000.0)
    try:
        op = request.get("op")
        if op == "hello":
            body = {"protocol": PROTOCOL, "caps": model.caps()}
        else:
            body = model.handle(str(op), payload)
    except OpError as exc:
        out.send({"id": request_id, "error": str(exc)})
        return
    except Exception as exc:  # noqa: BLE001 -- handler bugs must stay request-local
        out.send({"id": request_id, "error": f"{type(exc).__name__}: {exc}"})
        return
    out.send({"id": request_id, **body})
