"""Overlapped document-to-leaf reassignment.

Given which leaves each training query reaches (``M``, queries x leaves) and
which documents each query should find (``Ybar``, queries x docs), the count
matrix ``T = Ybar^T M`` scores every (doc, leaf) pair.  Maximizing the linear
objective ``Tr(Ybar^T M C^T)`` under "at most lambda leaves per doc"
decomposes per document row, so the optimum keeps the lambda best-scoring
leaves of each row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
from scipy import sparse

from .core import Corpus, Qrels, QuerySet, SparseBinaryMatrix
from .encoder import QueryEncoder
from .errors import ConfigError, InvariantError, KTooLarge, ShapeMismatch
from .retrieval import beam_search_leaves, score_rows
from .tree import TreeIndex


@dataclass
class ReclusterConfig:
    lam: int = 2
    k_feedback: int = 100
    beam_b: int = 4

    def __post_init__(self):
        if self.lam < 1:
            raise ConfigError("lambda must be >= 1")
        if self.k_feedback < 1:
            raise ConfigError("k_feedback must be >= 1")
        if self.beam_b < 1:
            raise ConfigError("beam_b must be >= 1")


def build_M(tree: TreeIndex, encoder: QueryEncoder, queries: QuerySet, beam_b: int) -> SparseBinaryMatrix:
    """Query-to-leaf matrix: row i marks the leaves in query i's beam (columns in ``tree.leaf_ids`` order)."""
    col = {leaf: j for j, leaf in enumerate(tree.leaf_ids)}
    rows = []
    for feats in queries.features:
        leaves, _ = beam_search_leaves(tree, encoder.encode(feats), beam_b)
        rows.append([col[leaf] for leaf in leaves])
    return SparseBinaryMatrix(len(queries), tree.num_leaves, rows)


def build_Ybar(
    encoder: QueryEncoder,
    queries: QuerySet,
    corpus: Corpus,
    k_feedback: int,
    qrels: Optional[Qrels] = None,
) -> SparseBinaryMatrix:
    """Feedback matrix: each query's exact top-``k_feedback`` docs.

    With ``qrels``, judged-relevant documents are added to their query's row
    as well, so a row can hold more than ``k_feedback`` ones.
    """
    if k_feedback > corpus.n:
        raise KTooLarge(f"k_feedback={k_feedback} exceeds corpus size {corpus.n}")
    judged: Dict[str, List[int]] = {}
    if qrels is not None:
        for (q, d), rel in qrels.judgments.items():
            if rel >= 1:
                judged.setdefault(q, []).append(corpus.index_of(d))
    all_docs = np.arange(corpus.n, dtype=np.int64)
    rows = []
    for qid, feats in zip(queries.query_ids, queries.features):
        scores = score_rows(corpus.embeddings, all_docs, encoder.encode(feats))
        top = np.lexsort((all_docs, -scores))[:k_feedback]
        rows.append(np.concatenate([top, np.asarray(judged.get(qid, []), dtype=np.int64)]))
    return SparseBinaryMatrix(len(queries), corpus.n, rows)


def build_Y(queries: QuerySet, corpus: Corpus, qrels: Qrels) -> SparseBinaryMatrix:
    """Ground-truth matrix from judgments; unjudged pairs are 0."""
    rows: List[List[int]] = [[] for _ in range(len(queries))]
    for (q, d), rel in qrels.judgments.items():
        if rel >= 1 and q in queries._index:
            rows[queries.index_of(q)].append(corpus.index_of(d))
    return SparseBinaryMatrix(len(queries), corpus.n, rows)


def assignment_matrix(leaf_docs: Mapping[int, Sequence[int]], n_docs: int) -> SparseBinaryMatrix:
    """Doc-to-leaf matrix C (docs x leaves, columns in sorted leaf id order)."""
    rows: List[List[int]] = [[] for _ in range(n_docs)]
    for j, leaf in enumerate(sorted(leaf_docs)):
        for d in leaf_docs[leaf]:
            rows[int(d)].append(j)
    return SparseBinaryMatrix(n_docs, len(leaf_docs), rows)


def score_matrix(ybar: SparseBinaryMatrix, m: SparseBinaryMatrix) -> sparse.csr_matrix:
    """T = Ybar^T M: T[d, leaf] counts queries that want d and reach leaf."""
    if ybar.rows != m.rows:
        raise ShapeMismatch(f"Ybar has {ybar.rows} rows, M has {m.rows}")
    t = (ybar.to_csr().T @ m.to_csr()).tocsr()
    t.sort_indices()
    return t


def overlapped_assign(
    ybar: SparseBinaryMatrix,
    m: SparseBinaryMatrix,
    lam: int,
    original: Union[TreeIndex, Mapping[int, Sequence[int]]],
) -> Dict[int, np.ndarray]:
    """New leaf document sets from the per-row top-``lam`` projection of ``Ybar^T M``.

    Rows are ranked by count, then by membership in the document's current
    leaves, then by lower leaf id.  Zero-count leaves are only kept when they
    are current leaves.  Documents whose row is all zero stay where they are.
    """
    if lam < 1:
        raise ConfigError("lambda must be >= 1")
    leaf_docs = original.leaf_docs if isinstance(original, TreeIndex) else original
    leaf_ids = sorted(leaf_docs)
    n_docs = ybar.cols
    if m.cols != len(leaf_ids):
        raise ShapeMismatch(f"M has {m.cols} columns for {len(leaf_ids)} leaves")
    current = assignment_matrix(leaf_docs, n_docs)
    t = score_matrix(ybar, m)

    new_rows: List[List[int]] = [[] for _ in leaf_ids]
    for d in range(n_docs):
        orig_cols = current.entries[d]
        lo, hi = t.indptr[d], t.indptr[d + 1]
        cols, vals = t.indices[lo:hi], t.data[lo:hi]
        nz = vals > 0
        cols, vals = cols[nz], vals[nz]
        if cols.size == 0:
            # no feedback reaches this doc: keep its current leaves
            chosen = orig_cols[:lam]
        else:
            cand = np.union1d(cols, orig_cols)
            score = np.zeros(cand.size, dtype=np.int64)
            score[np.searchsorted(cand, cols)] = vals
            is_orig = np.isin(cand, orig_cols)
            order = np.lexsort((cand, ~is_orig, -score))
            picked = cand[order[:lam]]
            keep = (score[order[:lam]] > 0) | is_orig[order[:lam]]
            chosen = picked[keep]
        for j in chosen:
            new_rows[int(j)].append(d)
    return {leaf: np.asarray(sorted(rows), dtype=np.int64) for leaf, rows in zip(leaf_ids, new_rows)}


def predicted_Yhat(m: SparseBinaryMatrix, c: SparseBinaryMatrix) -> SparseBinaryMatrix:
    """Binary(M C^T): query i reaches doc j through some shared leaf."""
    if m.cols != c.cols:
        raise ShapeMismatch(f"M has {m.cols} leaf columns, C has {c.cols}")
    return SparseBinaryMatrix.from_csr(m.to_csr() @ c.to_csr().T)


def intersection_count(y: SparseBinaryMatrix, yhat: SparseBinaryMatrix) -> int:
    if y.shape != yhat.shape:
        raise ShapeMismatch(f"{y.shape} vs {yhat.shape}")
    return int(sum(np.intersect1d(a, b, assume_unique=True).size for a, b in zip(y.entries, yhat.entries)))


def trace_recall(y: SparseBinaryMatrix, yhat: SparseBinaryMatrix) -> int:
    """Tr(Y^T Yhat) evaluated as a matrix product."""
    if y.shape != yhat.shape:
        raise ShapeMismatch(f"{y.shape} vs {yhat.shape}")
    prod = y.to_csr().T @ yhat.to_csr()
    return int(prod.diagonal().sum())


def recall_proxy(y: SparseBinaryMatrix, yhat: SparseBinaryMatrix) -> int:
    """Number of judged pairs the index can surface: |Y and Yhat|, equal to Tr(Y^T Yhat)."""
    count = intersection_count(y, yhat)
    trace = trace_recall(y, yhat)
    if count != trace:
        raise InvariantError(f"intersection count {count} != trace {trace}")
    return count


def relaxed_objective(ybar: SparseBinaryMatrix, m: SparseBinaryMatrix, c: SparseBinaryMatrix) -> int:
    """Tr(Ybar^T M C^T), the linear surrogate maximized by ``overlapped_assign``."""
    t = score_matrix(ybar, m)
    if c.shape != t.shape:
        raise ShapeMismatch(f"C is {c.shape}, expected {t.shape}")
    return int(t.multiply(c.to_csr()).sum())


def binary_objective(ybar: SparseBinaryMatrix, m: SparseBinaryMatrix, c: SparseBinaryMatrix) -> int:
    """Tr(Ybar^T Binary(M C^T)), the objective the surrogate approximates."""
    return intersection_count(ybar, predicted_Yhat(m, c))


def dump_scores(t: sparse.csr_matrix, leaf_ids: Sequence[int], doc_ids: Sequence[str], path) -> None:
    """Write nonzero entries of T as ``doc_id<TAB>leaf_id<TAB>count``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in range(t.shape[0]):
            for j, v in zip(t.indices[t.indptr[d]:t.indptr[d + 1]], t.data[t.indptr[d]:t.indptr[d + 1]]):
                if v:
                    fh.write(f"{doc_ids[d]}\t{leaf_ids[j]}\t{int(v)}\n")


def recluster(
    tree: TreeIndex,
    encoder: QueryEncoder,
    queries: QuerySet,
    corpus: Corpus,
    config: ReclusterConfig,
    qrels: Optional[Qrels] = None,
    score_dump: Optional[str] = None,
) -> TreeIndex:
    """Tree with reassigned leaf documents; structure and node embeddings unchanged."""
    m = build_M(tree, encoder, queries, config.beam_b)
    ybar = build_Ybar(encoder, queries, corpus, min(config.k_feedback, corpus.n), qrels)
    if score_dump:
        dump_scores(score_matrix(ybar, m), tree.leaf_ids, corpus.doc_ids, score_dump)
    new_docs = overlapped_assign(ybar, m, config.lam, tree)
    new_tree = tree.with_leaf_docs(new_docs)
    new_tree.validate(max_multiplicity=config.lam)
    return new_tree
