"""Beam search over the cluster tree, exact brute-force oracle, run assembly."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import Corpus, QuerySet, RunResult
from .encoder import QueryEncoder
from .errors import ConfigError, DimensionMismatch
from .tree import TreeIndex

Ranked = List[Tuple[int, float]]


@dataclass
class SearchStats:
    node_scores_computed: int = 0
    doc_scores_computed: int = 0
    leaves_visited: int = 0
    wall_time_ns: int = 0
    candidate_leaf_docs: int = 0  # sum of |S| over visited leaves, before dedup


_observers: List[Callable[[str, TreeIndex, int, "SearchStats"], None]] = []


def add_search_observer(fn) -> None:
    """Register ``fn(kind, tree, b, stats)``, called after every beam search ("beam") and retrieval ("retrieve")."""
    _observers.append(fn)


def remove_search_observer(fn) -> None:
    _observers.remove(fn)


def _notify(kind: str, tree: TreeIndex, b: int, stats: "SearchStats") -> None:
    for fn in _observers:
        fn(kind, tree, b, stats)


def score_rows(matrix: np.ndarray, rows, query: np.ndarray) -> np.ndarray:
    """Inner products of ``matrix[rows]`` with ``query``, accumulated in float64.

    Each row is reduced independently, so a document scores identically no
    matter which candidate set it is scored in.
    """
    sub = matrix[rows].astype(np.float64)
    return (sub * query).sum(axis=1)


def _top(ids: Sequence[int], scores: np.ndarray, n: int) -> List[int]:
    """Top ``n`` ids by score; ties to the lower id."""
    ids = np.asarray(ids, dtype=np.int64)
    order = np.lexsort((ids, -scores))
    return [int(i) for i in ids[order[:n]]]


def beam_search_leaves(tree: TreeIndex, query_embedding, b: int) -> Tuple[List[int], SearchStats]:
    """Collect up to ``b`` leaves by level-wise beam search from the root.

    Each round moves the leaves of the frontier into the result (best-scoring
    first if they would overflow ``b``), keeps the top ``b - |result|`` internal
    nodes and expands them into their children.  Nodes are only scored when a
    selection actually has to discard something, so the root is never scored.
    """
    if b < 1:
        raise ConfigError(f"beam size must be >= 1, got {b}")
    q = np.asarray(query_embedding, dtype=np.float64)
    if q.shape != (tree.dim,):
        raise DimensionMismatch(f"query dim {q.shape} vs tree dim {tree.dim}")
    t0 = time.perf_counter_ns()
    stats = SearchStats()
    nodes = tree.nodes
    emb = tree.embeddings
    result: List[int] = []
    frontier = [0]
    while frontier:
        cap = b - len(result)
        leaves = [n for n in frontier if not nodes[n].children]
        internal = [n for n in frontier if nodes[n].children]
        if len(leaves) > cap:
            stats.node_scores_computed += len(leaves)
            leaves = _top(leaves, score_rows(emb, leaves, q), cap)
        result.extend(leaves)
        cap = b - len(result)
        if cap <= 0 or not internal:
            break
        if len(internal) > cap:
            stats.node_scores_computed += len(internal)
            internal = _top(internal, score_rows(emb, internal, q), cap)
        frontier = sorted(c for n in internal for c in nodes[n].children)
    stats.leaves_visited = len(result)
    stats.wall_time_ns = time.perf_counter_ns() - t0
    if _observers:
        _notify("beam", tree, b, stats)
    return result, stats


def rank_candidates(corpus: Corpus, candidates: np.ndarray, query_embedding: np.ndarray, top_k: int) -> Ranked:
    scores = score_rows(corpus.embeddings, candidates, query_embedding)
    order = np.lexsort((candidates, -scores))[:top_k]
    return [(int(candidates[i]), float(scores[i])) for i in order]


def _encode(encoder: QueryEncoder, query_features, corpus: Corpus) -> np.ndarray:
    q = encoder.encode(query_features)
    if q.shape != (corpus.dim,):
        raise DimensionMismatch(f"encoded query dim {q.shape} vs corpus dim {corpus.dim}")
    return q


def retrieve(tree: TreeIndex, encoder: QueryEncoder, query_features, corpus: Corpus, b: int, top_k: int) -> Tuple[Ranked, SearchStats]:
    """Approximate top-k: beam-search leaves, then score their documents exactly."""
    if top_k < 1:
        raise ConfigError(f"top_k must be >= 1, got {top_k}")
    t0 = time.perf_counter_ns()
    q = _encode(encoder, query_features, corpus)
    leaves, stats = beam_search_leaves(tree, q, b)
    parts = [tree.leaf_docs[leaf] for leaf in leaves]
    stats.candidate_leaf_docs = int(sum(p.size for p in parts))
    candidates = np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
    stats.doc_scores_computed = int(candidates.size)
    ranked = rank_candidates(corpus, candidates, q, top_k)
    stats.wall_time_ns = time.perf_counter_ns() - t0
    if _observers:
        _notify("retrieve", tree, b, stats)
    return ranked, stats


def brute_force(encoder: QueryEncoder, query_features, corpus: Corpus, top_k: int) -> Ranked:
    """Exact top-k by inner product over every document."""
    if top_k < 1:
        raise ConfigError(f"top_k must be >= 1, got {top_k}")
    q = _encode(encoder, query_features, corpus)
    return rank_candidates(corpus, np.arange(corpus.n, dtype=np.int64), q, top_k)


def search_queries(
    tree: Optional[TreeIndex],
    encoder: QueryEncoder,
    queries: QuerySet,
    corpus: Corpus,
    b: int,
    top_k: int,
    rows: Optional[Sequence[int]] = None,
    stats_out: Optional[list] = None,
) -> RunResult:
    """Run every query (or ``rows``) and collect a RunResult; ``tree=None`` means brute force."""
    run = RunResult()
    rows = range(len(queries)) if rows is None else rows
    for r in rows:
        if tree is None:
            ranked = brute_force(encoder, queries.features[r], corpus, top_k)
        else:
            ranked, stats = retrieve(tree, encoder, queries.features[r], corpus, b, top_k)
            if stats_out is not None:
                stats_out.append(stats)
        run.add(queries.query_ids[r], [(corpus.doc_ids[d], s) for d, s in ranked])
    return run
