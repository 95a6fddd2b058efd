"""Reason/align/respond engine for knowledge-graph question answering.

Core pieces: an immutable in-memory triple store, a marker-delimited surface
grammar for reasoning chains and knowledge paths, graph-constrained exact
top-k path decoding, terminal path expansion, an EM training loop with a
deterministic mock backend, consolidation, and answer-set metrics.
"""

from .decoder import DecodeResult, PathDecoder, decode_beam, enumerate_valid_paths
from .em import (
    Candidate,
    EmConfig,
    EmState,
    QAInstance,
    run_em,
    run_iteration,
    sample_candidates,
    score_candidate,
    select_top_k,
)
from .errors import EngineError
from .expansion import abstract_terminal, expand_answers, instantiate
from .grammar import (
    GraphAwareChain,
    KnowledgePath,
    ReasoningChain,
    parse_chain,
    parse_graph_aware,
    parse_path,
    serialize_chain,
    serialize_graph_aware,
    serialize_path,
    validate_alignment,
)
from .kg import KnowledgeGraph, Triple, build_graph, collapse_cvt, load_graph, load_graph_file
from .metrics import Metrics, evaluate_dataset, normalize_answer, score_instance
from .mock import MockAnswerScorer, MockGenerator, UniformScorer

__version__ = "0.1.0"

__all__ = [
    "Candidate",
    "DecodeResult",
    "EmConfig",
    "EmState",
    "EngineError",
    "GraphAwareChain",
    "KnowledgeGraph",
    "KnowledgePath",
    "Metrics",
    "MockAnswerScorer",
    "MockGenerator",
    "PathDecoder",
    "QAInstance",
    "ReasoningChain",
    "Triple",
    "UniformScorer",
    "abstract_terminal",
    "build_graph",
    "collapse_cvt",
    "decode_beam",
    "enumerate_valid_paths",
    "evaluate_dataset",
    "expand_answers",
    "instantiate",
    "load_graph",
    "load_graph_file",
    "normalize_answer",
    "parse_chain",
    "parse_graph_aware",
    "parse_path",
    "run_em",
    "run_iteration",
    "sample_candidates",
    "score_candidate",
    "score_instance",
    "select_top_k",
    "serialize_chain",
    "serialize_graph_aware",
    "serialize_path",
    "validate_alignment",
]
