"""Ranking metrics (MRR@k, Recall@k, NDCG@k) and query latency."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import List, Optional

from .core import Corpus, Qrels, QuerySet, RunResult
from .encoder import QueryEncoder
from .errors import ConfigError, EmptyQuerySet
from .retrieval import retrieve
from .tree import TreeIndex

WARMUP_QUERIES = 10


def _judged_queries(run: RunResult, qrels: Qrels, min_rel: int = 1) -> List[str]:
    """Run queries with at least one relevant judgment."""
    by_q = qrels.by_query()
    out = [q for q, _ in run if any(r >= min_rel for r in by_q.get(q, {}).values())]
    if not out:
        raise EmptyQuerySet("no query in the run has a relevant judgment")
    return out


def _check_k(k: int) -> None:
    if k < 1:
        raise ConfigError(f"cutoff k must be >= 1, got {k}")


def mrr_at_k(run: RunResult, qrels: Qrels, k: int) -> float:
    _check_k(k)
    by_q = qrels.by_query()
    total = 0.0
    queries = _judged_queries(run, qrels)
    for q in queries:
        rels = by_q[q]
        for rank, (doc, _) in enumerate(run.rankings[q][:k], 1):
            if rels.get(doc, 0) >= 1:
                total += 1.0 / rank
                break
    return total / len(queries)


def recall_at_k(run: RunResult, qrels: Qrels, k: int) -> float:
    _check_k(k)
    by_q = qrels.by_query()
    total = 0.0
    queries = _judged_queries(run, qrels)
    for q in queries:
        relevant = {d for d, r in by_q[q].items() if r >= 1}
        found = sum(1 for doc, _ in run.rankings[q][:k] if doc in relevant)
        total += found / len(relevant)
    return total / len(queries)


def dcg(gains_in_rank_order) -> float:
    return sum((2.0 ** g - 1.0) / math.log2(i + 2) for i, g in enumerate(gains_in_rank_order))


def ndcg_at_k(run: RunResult, qrels: Qrels, k: int) -> float:
    """Graded NDCG with gain 2^rel - 1 and log2(rank + 1) discount."""
    _check_k(k)
    by_q = qrels.by_query()
    total = 0.0
    queries = _judged_queries(run, qrels)
    for q in queries:
        rels = by_q[q]
        got = dcg([rels.get(doc, 0) for doc, _ in run.rankings[q][:k]])
        ideal = dcg(sorted(rels.values(), reverse=True)[:k])
        total += got / ideal if ideal > 0 else 0.0
    return total / len(queries)


def measure_aqt(
    tree: TreeIndex,
    encoder: QueryEncoder,
    queries: QuerySet,
    corpus: Corpus,
    b: int,
    top_k: int,
    warmup: int = WARMUP_QUERIES,
) -> float:
    """Mean single-threaded, batch-1 latency per query in milliseconds.

    The first ``warmup`` queries are run but not timed.
    """
    timed = range(warmup, len(queries))
    if len(timed) == 0:
        raise EmptyQuerySet(f"need more than {warmup} queries to time after warm-up")
    for r in range(min(warmup, len(queries))):
        retrieve(tree, encoder, queries.features[r], corpus, b, top_k)
    elapsed = 0
    for r in timed:
        t0 = time.perf_counter_ns()
        retrieve(tree, encoder, queries.features[r], corpus, b, top_k)
        elapsed += time.perf_counter_ns() - t0
    return elapsed / len(timed) / 1e6


@dataclass
class MetricReport:
    mrr_at_k: float
    recall_at_k: float
    ndcg_at_k: float
    query_count: int
    k_mrr: int = 100
    k_recall: int = 100
    k_ndcg: int = 10
    aqt_ms: Optional[float] = None

    def rows(self) -> List[tuple]:
        out = [
            (f"MRR@{self.k_mrr}", self.mrr_at_k),
            (f"R@{self.k_recall}", self.recall_at_k),
            (f"NDCG@{self.k_ndcg}", self.ndcg_at_k),
            ("queries", self.query_count),
        ]
        if self.aqt_ms is not None:
            out.append(("AQT_ms", self.aqt_ms))
        return out

    def to_lines(self) -> str:
        return "".join(f"{name}\t{value!r}\n" for name, value in self.rows())

    def to_table(self) -> str:
        width = max(len(n) for n, _ in self.rows())
        lines = []
        for name, value in self.rows():
            shown = f"{value:.4f}" if isinstance(value, float) else str(value)
            lines.append(f"{name:<{width}}  {shown:>10}")
        return "\n".join(lines) + "\n"


def evaluate(run: RunResult, qrels: Qrels, k_mrr: int = 100, k_recall: int = 100, k_ndcg: int = 10, aqt_ms: Optional[float] = None) -> MetricReport:
    return MetricReport(
        mrr_at_k=mrr_at_k(run, qrels, k_mrr),
        recall_at_k=recall_at_k(run, qrels, k_recall),
        ndcg_at_k=ndcg_at_k(run, qrels, k_ndcg),
        query_count=len(_judged_queries(run, qrels)),
        k_mrr=k_mrr,
        k_recall=k_recall,
        k_ndcg=k_ndcg,
        aqt_ms=aqt_ms,
    )
