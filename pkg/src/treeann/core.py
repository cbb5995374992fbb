"""Shared data model: corpora, query sets, judgments, sparse binary matrices, runs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
from scipy import sparse

from .errors import (
    DataError,
    DimensionMismatch,
    DuplicatePair,
    NonFiniteValue,
    ShapeMismatch,
    UnknownId,
)

SEED_ALGORITHM = "PCG64"


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator seeded from a 64-bit unsigned seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)))


def spawn_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent child stream ``stream`` of ``seed``; stable across runs."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def _check_matrix(values, what: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{what} must be a 2-D matrix, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DataError(f"{what} must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{what} contains NaN or Inf")
    return arr


def _check_ids(ids: Sequence[str], n: int, what: str) -> Tuple[str, ...]:
    ids = tuple(str(i) for i in ids)
    if len(ids) != n:
        raise DataError(f"{what}: {len(ids)} ids for {n} rows")
    if len(set(ids)) != len(ids):
        raise DataError(f"{what}: ids are not unique")
    return ids


@dataclass(frozen=True, eq=False)
class Corpus:
    """Document ids plus an N x D float32 embedding matrix."""

    doc_ids: Tuple[str, ...]
    embeddings: np.ndarray

    def __post_init__(self):
        emb = _check_matrix(self.embeddings, "corpus embeddings")
        emb.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "doc_ids", _check_ids(self.doc_ids, emb.shape[0], "corpus"))
        object.__setattr__(self, "_index", {d: i for i, d in enumerate(self.doc_ids)})

    @classmethod
    def from_array(cls, embeddings, doc_ids: Sequence[str] | None = None) -> "Corpus":
        embeddings = np.asarray(embeddings)
        if doc_ids is None:
            doc_ids = [str(i) for i in range(embeddings.shape[0])] if embeddings.ndim == 2 else []
        return cls(tuple(doc_ids), embeddings)

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def index_of(self, doc_id: str) -> int:
        try:
            return self._index[doc_id]
        except KeyError:
            raise UnknownId(f"unknown doc id {doc_id!r}") from None


@dataclass(frozen=True, eq=False)
class QuerySet:
    """Query ids plus an L x D_in float32 matrix of raw query features."""

    query_ids: Tuple[str, ...]
    features: np.ndarray

    def __post_init__(self):
        feats = _check_matrix(self.features, "query features")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "query_ids", _check_ids(self.query_ids, feats.shape[0], "queries"))
        object.__setattr__(self, "_index", {q: i for i, q in enumerate(self.query_ids)})

    @classmethod
    def from_array(cls, features, query_ids: Sequence[str] | None = None) -> "QuerySet":
        features = np.asarray(features)
        if query_ids is None:
            query_ids = [f"q{i}" for i in range(features.shape[0])] if features.ndim == 2 else []
        return cls(tuple(query_ids), features)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def index_of(self, query_id: str) -> int:
        try:
            return self._index[query_id]
        except KeyError:
            raise UnknownId(f"unknown query id {query_id!r}") from None

    def subset(self, rows: Sequence[int]) -> "QuerySet":
        rows = list(rows)
        return QuerySet(tuple(self.query_ids[r] for r in rows), self.features[rows])


@dataclass(frozen=True)
class Qrels:
    """Relevance judgments keyed by (query_id, doc_id)."""

    judgments: Mapping[Tuple[str, str], int]

    @classmethod
    def from_triples(cls, triples: Iterable[Tuple[str, str, int]]) -> "Qrels":
        out: Dict[Tuple[str, str], int] = {}
        for qid, did, rel in triples:
            key = (str(qid), str(did))
            if key in out:
                raise DuplicatePair(f"duplicate judgment for {key}")
            rel = int(rel)
            if rel < 0:
                raise DataError(f"negative relevance for {key}")
            out[key] = rel
        return cls(out)

    def __len__(self) -> int:
        return len(self.judgments)

    def for_query(self, query_id: str) -> Dict[str, int]:
        return self.by_query().get(query_id, {})

    def by_query(self) -> Dict[str, Dict[str, int]]:
        cached = self.__dict__.get("_by_query")
        if cached is None:
            cached = {}
            for (q, d), rel in sorted(self.judgments.items()):
                cached.setdefault(q, {})[d] = rel
            object.__setattr__(self, "_by_query", cached)
        return cached

    def relevant_pairs(self, queries: QuerySet, corpus: Corpus, min_rel: int = 1) -> List[Tuple[int, int]]:
        """(query row, doc row) pairs with relevance >= ``min_rel``, sorted.

        Raises UnknownId when a judged id cannot be resolved.
        """
        pairs = []
        for (q, d), rel in self.judgments.items():
            if rel >= min_rel:
                pairs.append((queries.index_of(q), corpus.index_of(d)))
        pairs.sort()
        return pairs

    def restrict(self, query_ids: Iterable[str]) -> "Qrels":
        keep = set(query_ids)
        return Qrels({k: v for k, v in self.judgments.items() if k[0] in keep})


class SparseBinaryMatrix:
    """Binary matrix stored as a sorted, duplicate-free column set per row."""

    def __init__(self, rows: int, cols: int, entries: Sequence[Iterable[int]]):
        if len(entries) != rows:
            raise ShapeMismatch(f"{len(entries)} entry rows for a {rows}-row matrix")
        self.rows = int(rows)
        self.cols = int(cols)
        clean = []
        for r in entries:
            arr = np.unique(np.asarray(list(r) if not isinstance(r, np.ndarray) else r, dtype=np.int64))
            if arr.size and (arr[0] < 0 or arr[-1] >= cols):
                raise ShapeMismatch(f"column index out of range [0, {cols})")
            clean.append(arr)
        self.entries: Tuple[np.ndarray, ...] = tuple(clean)

    @classmethod
    def from_dense(cls, dense) -> "SparseBinaryMatrix":
        dense = np.asarray(dense)
        return cls(dense.shape[0], dense.shape[1], [np.flatnonzero(row) for row in dense])

    @classmethod
    def from_csr(cls, mat) -> "SparseBinaryMatrix":
        mat = sparse.csr_matrix(mat)
        mat.eliminate_zeros()
        mat.sort_indices()
        rows = [mat.indices[mat.indptr[i]:mat.indptr[i + 1]] for i in range(mat.shape[0])]
        return cls(mat.shape[0], mat.shape[1], rows)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.rows, self.cols)

    def nnz(self) -> int:
        return int(sum(r.size for r in self.entries))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.int64)
        for i, r in enumerate(self.entries):
            out[i, r] = 1
        return out

    def to_csr(self) -> sparse.csr_matrix:
        indptr = np.zeros(self.rows + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([r.size for r in self.entries])
        indices = np.concatenate(self.entries) if self.rows else np.zeros(0, dtype=np.int64)
        data = np.ones(indices.size, dtype=np.int64)
        return sparse.csr_matrix((data, indices, indptr), shape=self.shape)

    def transpose(self) -> "SparseBinaryMatrix":
        return SparseBinaryMatrix.from_csr(self.to_csr().T)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseBinaryMatrix) or other.shape != self.shape:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.entries, other.entries))

    def __repr__(self) -> str:
        return f"SparseBinaryMatrix(rows={self.rows}, cols={self.cols}, nnz={self.nnz()})"


@dataclass
class RunResult:
    """Ranked (doc_id, score) lists per query id, best first."""

    rankings: Dict[str, List[Tuple[str, float]]] = field(default_factory=dict)

    def add(self, query_id: str, ranked: Sequence[Tuple[str, float]]) -> None:
        ranked = [(str(d), float(s)) for d, s in ranked]
        seen = set()
        for i, (d, s) in enumerate(ranked):
            if d in seen:
                raise DataError(f"doc {d!r} ranked twice for query {query_id!r}")
            seen.add(d)
            if i and s > ranked[i - 1][1]:
                raise DataError(f"scores for query {query_id!r} are not non-increasing")
        self.rankings[str(query_id)] = ranked

    def __len__(self) -> int:
        return len(self.rankings)

    def __iter__(self):
        return iter(self.rankings.items())
