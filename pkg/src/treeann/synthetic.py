"""Seeded Gaussian-blob corpora with queries and relevance judgments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .core import Corpus, Qrels, QuerySet, spawn_rng
from .errors import ConfigError


@dataclass
class BlobSpec:
    num_blobs: int = 16
    docs_per_blob: int = 64
    dim: int = 32
    blob_spread: float = 1.0
    noise: float = 0.25
    seed: int = 0
    num_queries: int = 200
    relevant_per_query: int = 5

    def validate(self) -> None:
        for name in ("num_blobs", "docs_per_blob", "dim", "num_queries", "relevant_per_query"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.blob_spread > self.noise >= 0:
            raise ConfigError("need blob_spread > noise >= 0")
        if self.relevant_per_query > self.docs_per_blob:
            raise ConfigError("relevant_per_query cannot exceed docs_per_blob")


def generate_blobs(spec: BlobSpec) -> Tuple[Corpus, QuerySet, Qrels]:
    """Blob centers on a sphere of radius ``blob_spread``; docs and queries are center + N(0, noise^2).

    Each query is judged relevant (rel=1) to the ``relevant_per_query`` docs of
    its own blob with the highest inner product, lower index first on ties.
    """
    spec.validate()
    centers = spawn_rng(spec.seed, 0).standard_normal((spec.num_blobs, spec.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= spec.blob_spread

    doc_rng = spawn_rng(spec.seed, 1)
    n = spec.num_blobs * spec.docs_per_blob
    doc_blob = np.repeat(np.arange(spec.num_blobs), spec.docs_per_blob)
    docs = centers[doc_blob] + spec.noise * doc_rng.standard_normal((n, spec.dim))
    docs = docs.astype(np.float32)

    q_rng = spawn_rng(spec.seed, 2)
    q_blob = q_rng.integers(spec.num_blobs, size=spec.num_queries)
    queries = (centers[q_blob] + spec.noise * q_rng.standard_normal((spec.num_queries, spec.dim))).astype(np.float32)

    doc_ids = tuple(f"d{i}" for i in range(n))
    query_ids = tuple(f"q{i}" for i in range(spec.num_queries))
    docs64 = docs.astype(np.float64)
    triples = []
    for i, (blob, q) in enumerate(zip(q_blob, queries.astype(np.float64))):
        members = np.arange(blob * spec.docs_per_blob, (blob + 1) * spec.docs_per_blob)
        scores = (docs64[members] * q).sum(axis=1)
        top = members[np.lexsort((members, -scores))[: spec.relevant_per_query]]
        triples.extend((query_ids[i], doc_ids[d], 1) for d in top)
    return Corpus(doc_ids, docs), QuerySet(query_ids, queries), Qrels.from_triples(triples)


def split_queries(queries: QuerySet, qrels: Qrels, n_train: int) -> Tuple[QuerySet, Qrels, QuerySet, Qrels]:
    """First ``n_train`` queries for training, the rest held out."""
    if not 0 < n_train < len(queries):
        raise ConfigError(f"n_train must be in (0, {len(queries)})")
    train_q = queries.subset(range(n_train))
    dev_q = queries.subset(range(n_train, len(queries)))
    return train_q, qrels.restrict(train_q.query_ids), dev_q, qrels.restrict(dev_q.query_ids)
