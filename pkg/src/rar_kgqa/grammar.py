"""Surface formats for reasoning chains and knowledge paths.

A chain is free text framed by THINK markers; a path is a sequence of
delimiter-bounded triples framed by ALIGN markers. Parsers reject unbalanced
or out-of-order markers with a byte offset and never silently repair input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import DataError, GrammarError, StructureError, UnknownTripleError
from .kg import KnowledgeGraph, LabelTriple

THINK_OPEN = "<THINK>"
THINK_CLOSE = "</THINK>"
ALIGN_OPEN = "<ALIGN>"
ALIGN_CLOSE = "</ALIGN>"
TRIPLE_OPEN = "<TRIPLE>"
TRIPLE_CLOSE = "</TRIPLE>"
FIELD_SEP = "<|>"

# Compact triple form accepted on parse for compatibility; never emitted.
TRI_OPEN = "<TRI>"
TRI_CLOSE = "</TRI>"

RESERVED_MARKERS = (
    THINK_OPEN,
    THINK_CLOSE,
    ALIGN_OPEN,
    ALIGN_CLOSE,
    TRIPLE_OPEN,
    TRIPLE_CLOSE,
    FIELD_SEP,
)


@dataclass(frozen=True)
class ReasoningChain:
    steps: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.steps)

    def joined(self) -> str:
        return " ".join(self.steps)


@dataclass(frozen=True)
class KnowledgePath:
    triples: tuple[LabelTriple, ...]

    def __len__(self) -> int:
        return len(self.triples)

    def connectivity_break(self) -> Optional[int]:
        """Index of the first triple whose head is not the previous tail."""
        for i in range(1, len(self.triples)):
            if self.triples[i][0] != self.triples[i - 1][2]:
                return i
        return None


@dataclass(frozen=True)
class GraphAwareChain:
    """The unified latent pair: a reasoning chain plus its aligned path."""

    chain: ReasoningChain
    path: KnowledgePath


@dataclass(frozen=True)
class AlignmentViolation:
    kind: str  # "connectivity" | "length" | "marker" | "empty"
    detail: str


def _contains_marker(text: str) -> Optional[str]:
    for marker in RESERVED_MARKERS:
        if marker in text:
            return marker
    return None


def make_chain(steps: Iterable[str]) -> ReasoningChain:
    return ReasoningChain(tuple(steps))


def make_path(triples: Iterable[Sequence[str]]) -> KnowledgePath:
    return KnowledgePath(tuple((h, r, t) for h, r, t in triples))


# ---------------------------------------------------------------------------
# serialization


def serialize_chain(chain: ReasoningChain) -> str:
    if len(chain.steps) == 0:
        raise ValueError("cannot serialize an empty reasoning chain")
    for i, step in enumerate(chain.steps):
        if not step.strip():
            raise ValueError(f"step {i} is empty")
        marker = _contains_marker(step)
        if marker is not None:
            raise ValueError(f"step {i} contains reserved marker {marker!r}")
    return THINK_OPEN + chain.joined() + THINK_CLOSE


def serialize_path(path: KnowledgePath) -> str:
    if len(path.triples) == 0:
        raise ValueError("cannot serialize an empty knowledge path")
    broken = path.connectivity_break()
    if broken is not None:
        raise StructureError(
            f"head {path.triples[broken][0]!r} does not chain onto previous "
            f"tail {path.triples[broken - 1][2]!r}",
            broken,
        )
    units = []
    for i, (h, r, t) in enumerate(path.triples):
        for lbl in (h, r, t):
            if not lbl.strip():
                raise ValueError(f"triple {i} has an empty label")
            marker = _contains_marker(lbl)
            if marker is not None:
                raise ValueError(
                    f"triple {i} label {lbl!r} contains reserved marker {marker!r}"
                )
        units.append(
            f"{TRIPLE_OPEN} {FIELD_SEP} {h} {FIELD_SEP} {r} {FIELD_SEP} {t} {TRIPLE_CLOSE}"
        )
    return ALIGN_OPEN + " ".join(units) + ALIGN_CLOSE


# ---------------------------------------------------------------------------
# parsing


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)

    def expect(self, token: str) -> None:
        self.skip_ws()
        if not self.text.startswith(token, self.pos):
            raise GrammarError(f"expected {token!r}", self.pos)
        self.pos += len(token)

    def peek(self, token: str) -> bool:
        self.skip_ws()
        return self.text.startswith(token, self.pos)

    def take(self, token: str) -> bool:
        if self.peek(token):
            self.pos += len(token)
            return True
        return False

    def until_any(self, tokens: Sequence[str]) -> tuple[str, str]:
        """Consume text up to the nearest of ``tokens``; return (text, token)."""
        best: Optional[tuple[int, str]] = None
        for token in tokens:
            idx = self.text.find(token, self.pos)
            if idx >= 0 and (best is None or idx < best[0]):
                best = (idx, token)
        if best is None:
            raise GrammarError(
                f"expected one of {tokens!r} before end of input", len(self.text)
            )
        chunk = self.text[self.pos : best[0]]
        self.pos = best[0] + len(best[1])
        return chunk, best[1]


def parse_chain(s: str) -> ReasoningChain:
    """Inverse of serialize_chain. Free text between markers parses as one step."""
    sc = _Scanner(s)
    sc.expect(THINK_OPEN)
    inner_start = sc.pos
    inner, _ = sc.until_any([THINK_CLOSE])
    marker = _contains_marker(inner)
    if marker is not None:
        raise GrammarError(
            f"unexpected marker {marker!r} inside reasoning chain",
            s.find(marker, inner_start),
        )
    if not sc.at_end():
        raise GrammarError("trailing text after </THINK>", sc.pos)
    text = inner.strip()
    if not text:
        raise GrammarError("empty reasoning chain", inner_start)
    return ReasoningChain((text,))


def _parse_delimited_triple(sc: _Scanner, index: int) -> LabelTriple:
    sc.expect(FIELD_SEP)
    head, _ = sc.until_any([FIELD_SEP])
    rel, _ = sc.until_any([FIELD_SEP])
    tail, stop = sc.until_any([FIELD_SEP, TRIPLE_CLOSE])
    if stop == FIELD_SEP:
        raise GrammarError(
            f"too many fields in triple {index}", sc.pos - len(FIELD_SEP)
        )
    fields = (head.strip(), rel.strip(), tail.strip())
    if not all(fields):
        raise GrammarError(f"empty field in triple {index}", sc.pos)
    return fields


def _parse_compact_triple(sc: _Scanner, index: int) -> LabelTriple:
    start = sc.pos
    inner, _ = sc.until_any([TRI_CLOSE])
    inner = inner.strip()
    if not (inner.startswith("(") and inner.endswith(")")):
        raise GrammarError(f"triple {index} is not parenthesized", start)
    parts = [p.strip() for p in inner[1:-1].split(",")]
    if len(parts) != 3 or not all(parts):
        raise GrammarError(
            f"triple {index} must contain exactly 3 comma-separated labels", start
        )
    return (parts[0], parts[1], parts[2])


def parse_path(s: str, g: Optional[KnowledgeGraph] = None) -> KnowledgePath:
    """Inverse of serialize_path; also accepts the compact <TRI>(h,r,t)</TRI> form.

    With a graph argument, every parsed triple must exist in the graph.
    """
    sc = _Scanner(s)
    sc.expect(ALIGN_OPEN)
    triples: list[LabelTriple] = []
    while True:
        if sc.take(ALIGN_CLOSE):
            break
        if sc.take(TRIPLE_OPEN):
            triples.append(_parse_delimited_triple(sc, len(triples)))
        elif sc.take(TRI_OPEN):
            triples.append(_parse_compact_triple(sc, len(triples)))
        else:
            raise GrammarError(
                f"expected {TRIPLE_OPEN!r}, {TRI_OPEN!r} or {ALIGN_CLOSE!r}", sc.pos
            )
    if not sc.at_end():
        raise GrammarError("trailing text after </ALIGN>", sc.pos)
    if not triples:
        raise GrammarError("alignment block holds no triples", 0)

    path = KnowledgePath(tuple(triples))
    broken = path.connectivity_break()
    if broken is not None:
        raise StructureError(
            f"head {triples[broken][0]!r} does not chain onto previous tail "
            f"{triples[broken - 1][2]!r}",
            broken,
        )
    if g is not None:
        unknown = [t for t in triples if not g.has_label_triple(t)]
        if unknown:
            raise UnknownTripleError(unknown)
    return path


# ---------------------------------------------------------------------------
# alignment validation


def validate_alignment(z: GraphAwareChain) -> list[AlignmentViolation]:
    """Structural report for a chain/path pair; an empty list means valid."""
    violations: list[AlignmentViolation] = []
    if len(z.chain) == 0:
        violations.append(AlignmentViolation("empty", "chain has no steps"))
    if len(z.path) == 0:
        violations.append(AlignmentViolation("empty", "path has no triples"))
    for i, step in enumerate(z.chain.steps):
        if not step.strip():
            violations.append(AlignmentViolation("empty", f"step {i} is empty"))
            continue
        marker = _contains_marker(step)
        if marker is not None:
            violations.append(
                AlignmentViolation("marker", f"step {i} contains {marker!r}")
            )
    for i, (h, r, t) in enumerate(z.path.triples):
        for lbl in (h, r, t):
            if not lbl.strip():
                violations.append(
                    AlignmentViolation("empty", f"triple {i} has an empty label")
                )
            else:
                marker = _contains_marker(lbl)
                if marker is not None:
                    violations.append(
                        AlignmentViolation(
                            "marker", f"triple {i} label {lbl!r} contains {marker!r}"
                        )
                    )
    broken = z.path.connectivity_break()
    if broken is not None:
        violations.append(
            AlignmentViolation("connectivity", f"break at triple {broken}")
        )
    if len(z.path) > len(z.chain):
        violations.append(
            AlignmentViolation(
                "length",
                f"path length {len(z.path)} exceeds chain length {len(z.chain)}",
            )
        )
    return violations


# ---------------------------------------------------------------------------
# combined output block (the generator's two-section completion format)

THINKING_HEADER = "Thinking process:"
ALIGN_HEADER = "Align Process:"


def serialize_graph_aware(z: GraphAwareChain) -> str:
    """Serialize the pair into the labeled two-section completion block."""
    violations = validate_alignment(z)
    if violations:
        summary = "; ".join(f"{v.kind}: {v.detail}" for v in violations)
        raise ValueError(f"invalid chain/path pair: {summary}")
    return (
        f"{THINKING_HEADER}\n{serialize_chain(z.chain)}\n\n"
        f"{ALIGN_HEADER}\n{serialize_path(z.path)}"
    )


def parse_graph_aware(s: str, g: Optional[KnowledgeGraph] = None) -> GraphAwareChain:
    """Extract and parse the THINK and ALIGN blocks from a completion text.

    Surrounding text (section labels, prompt scaffolding) is ignored. Step
    boundaries are not recoverable from text: the parsed chain holds the
    joined step text as a single step.
    """
    think_start = s.find(THINK_OPEN)
    if think_start < 0:
        raise GrammarError(f"missing {THINK_OPEN!r}", 0)
    think_end = s.find(THINK_CLOSE, think_start)
    if think_end < 0:
        raise GrammarError(f"missing {THINK_CLOSE!r}", len(s))
    chain = parse_chain(s[think_start : think_end + len(THINK_CLOSE)])

    align_start = s.find(ALIGN_OPEN)
    if align_start < 0:
        raise GrammarError(f"missing {ALIGN_OPEN!r}", 0)
    align_end = s.find(ALIGN_CLOSE, align_start)
    if align_end < 0:
        raise GrammarError(f"missing {ALIGN_CLOSE!r}", len(s))
    path = parse_path(s[align_start : align_end + len(ALIGN_CLOSE)], g)
    return GraphAwareChain(chain=chain, path=path)


# ---------------------------------------------------------------------------
# candidate JSON records (interchange with the harness and the bridge)


def candidate_record(z: GraphAwareChain, logp_gen: float) -> dict:
    return {
        "chain": list(z.chain.steps),
        "path": [list(t) for t in z.path.triples],
        "logp_gen": float(logp_gen),
    }


def parse_candidate_record(record: dict) -> tuple[GraphAwareChain, float]:
    """Validate and decode a candidate JSON record. Raises DataError on shape errors."""
    if not isinstance(record, dict):
        raise DataError(f"candidate record must be an object, got {type(record).__name__}")
    chain = record.get("chain")
    path = record.get("path")
    logp_gen = record.get("logp_gen")
    if not isinstance(chain, list) or not all(isinstance(s, str) for s in chain):
        raise DataError("candidate 'chain' must be a list of strings")
    if not isinstance(path, list):
        raise DataError("candidate 'path' must be a list of [head, relation, tail]")
    triples = []
    for item in path:
        if (
            not isinstance(item, (list, tuple))
            or len(item) != 3
            or not all(isinstance(x, str) for x in item)
        ):
            raise DataError(f"bad path element {item!r}")
        triples.append(tuple(item))
    if not isinstance(logp_gen, (int, float)) or isinstance(logp_gen, bool):
        raise DataError("candidate 'logp_gen' must be a number")
    z = GraphAwareChain(
        chain=ReasoningChain(tuple(chain)), path=KnowledgePath(tuple(triples))
    )
    return z, float(logp_gen)
