"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class TripleParseError(EngineError):
    """A triple file line could not be parsed. Carries the 1-based line number."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class GrammarError(EngineError):
    """A chain/path string violates the surface grammar. Carries a byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"offset {offset}: {message}")
        self.offset = offset


class StructureError(EngineError):
    """A path breaks the linear-chaining rule. Carries the offending triple index."""

    def __init__(self, message: str, index: int):
        super().__init__(f"triple {index}: {message}")
        self.index = index


class UnknownTripleError(EngineError):
    """A parsed path references triples absent from the graph."""

    def __init__(self, triples):
        self.triples = list(triples)
        shown = ", ".join(f"({h}, {r}, {t})" for h, r, t in self.triples)
        super().__init__(f"triples not in graph: {shown}")


class ConstraintViolation(EngineError):
    """A decoder transition was attempted with a symbol outside the allowed set."""


class ScorerContractError(EngineError):
    """A scorer returned log-probabilities that break the scorer contract."""


class ResourceLimitError(EngineError):
    """An exhaustive enumeration exceeded its depth/size guard."""


class TemplateError(EngineError):
    """A path template's concrete prefix is not a valid path in the graph."""


class GenerationError(EngineError):
    """A generator failed to produce enough valid candidates within the retry budget."""


class BridgeError(EngineError):
    """The external model bridge misbehaved (handshake, transport, or protocol)."""


class BridgeOpError(BridgeError):
    """The bridge answered a request with an error payload."""


class DataError(EngineError):
    """An input dataset or config file is invalid."""
