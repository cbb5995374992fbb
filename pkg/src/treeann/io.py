"""Binary embedding files, id sidecars, qrels and run files.

Embedding file layout (little-endian)::

    b"JTRV" | version u32 = 1 | count u64 | dim u32 | pad u32 = 0 | f32[count * dim]

Ids live next to the matrix in a ``<path>.ids.tsv`` sidecar of
``id <TAB> row_index`` lines.  Without a sidecar, rows are named by their index.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .core import Corpus, Qrels, QuerySet, RunResult
from .errors import (
    DuplicatePair,
    IoFailure,
    MagicMismatch,
    NonFiniteValue,
    ParseError,
    TruncatedFile,
    VersionUnsupported,
)

EMB_MAGIC = b"JTRV"
EMB_VERSION = 1
_EMB_HEADER = struct.Struct("<4sIQII")
EMB_HEADER_SIZE = _EMB_HEADER.size  # 24


def sidecar_path(path) -> Path:
    return Path(str(path) + ".ids.tsv")


def write_matrix(matrix: np.ndarray, path) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    count, dim = matrix.shape
    try:
        with open(path, "wb") as fh:
            fh.write(_EMB_HEADER.pack(EMB_MAGIC, EMB_VERSION, count, dim, 0))
            fh.write(matrix.tobytes(order="C"))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_matrix(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < EMB_HEADER_SIZE:
        if raw[:4] != EMB_MAGIC[: len(raw[:4])]:
            raise MagicMismatch(f"{path}: not an embedding file")
        raise TruncatedFile(f"{path}: header truncated ({len(raw)} bytes)")
    magic, version, count, dim, pad = _EMB_HEADER.unpack_from(raw)
    if magic != EMB_MAGIC:
        raise MagicMismatch(f"{path}: bad magic {magic!r}")
    if version != EMB_VERSION:
        raise VersionUnsupported(f"{path}: version {version} not supported")
    if pad != 0:
        raise MagicMismatch(f"{path}: non-zero header padding")
    expected = count * dim * 4
    payload = len(raw) - EMB_HEADER_SIZE
    if payload < expected:
        raise TruncatedFile(f"{path}: expected {expected} payload bytes, found {payload}")
    if payload > expected:
        raise TruncatedFile(f"{path}: {payload - expected} trailing bytes after payload")
    mat = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=EMB_HEADER_SIZE)
    mat = mat.reshape(count, dim).astype(np.float32)
    if not np.all(np.isfinite(mat)):
        raise NonFiniteValue(f"{path}: payload contains NaN or Inf")
    return mat


def write_ids(ids: Sequence[str], path) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for row, ident in enumerate(ids):
                fh.write(f"{ident}\t{row}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_ids(path, count: int) -> List[str]:
    ids = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected 'id<TAB>row_index'", path, lineno)
            try:
                row = int(parts[1])
            except ValueError:
                raise ParseError(f"bad row index {parts[1]!r}", path, lineno) from None
            if row != len(ids):
                raise ParseError(f"row index {row} out of order, expected {len(ids)}", path, lineno)
            ids.append(parts[0])
    if len(ids) != count:
        raise ParseError(f"{len(ids)} ids for {count} rows", path)
    return ids


def load_embeddings(path) -> Corpus:
    """Read a corpus embedding file (and its id sidecar when present)."""
    mat = read_matrix(path)
    side = sidecar_path(path)
    ids = read_ids(side, mat.shape[0]) if side.exists() else [str(i) for i in range(mat.shape[0])]
    return Corpus(tuple(ids), mat)


def save_embeddings(corpus: Corpus, path, write_sidecar: bool = True) -> None:
    write_matrix(corpus.embeddings, path)
    if write_sidecar:
        write_ids(corpus.doc_ids, sidecar_path(path))


def load_queries(path) -> QuerySet:
    mat = read_matrix(path)
    side = sidecar_path(path)
    ids = read_ids(side, mat.shape[0]) if side.exists() else [str(i) for i in range(mat.shape[0])]
    return QuerySet(tuple(ids), mat)


def save_queries(queries: QuerySet, path) -> None:
    write_matrix(queries.features, path)
    write_ids(queries.query_ids, sidecar_path(path))


def load_qrels(path) -> Qrels:
    """Parse ``query_id<TAB>doc_id<TAB>relevance`` lines; ``#`` lines are comments."""
    judgments: Dict[Tuple[str, str], int] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError("expected 3 tab-separated fields", path, lineno)
            qid, did, rel = parts
            try:
                rel_i = int(rel)
            except ValueError:
                raise ParseError(f"relevance {rel!r} is not an integer", path, lineno) from None
            if rel_i < 0:
                raise ParseError(f"negative relevance {rel_i}", path, lineno)
            if (qid, did) in judgments:
                raise DuplicatePair(f"duplicate pair ({qid}, {did})", path, lineno)
            judgments[(qid, did)] = rel_i
    return Qrels(judgments)


def save_qrels(qrels: Qrels, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (q, d), rel in sorted(qrels.judgments.items()):
            fh.write(f"{q}\t{d}\t{rel}\n")


def save_run(run: RunResult, path) -> None:
    """Write ``query_id doc_id rank score`` rows, rank 1-based."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid, ranked in run:
            for rank, (did, score) in enumerate(ranked, 1):
                fh.write(f"{qid}\t{did}\t{rank}\t{score!r}\n")


def load_run(path) -> RunResult:
    per_query: Dict[str, List[Tuple[int, str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError("expected 4 tab-separated fields", path, lineno)
            try:
                per_query.setdefault(parts[0], []).append((int(parts[2]), parts[1], float(parts[3])))
            except ValueError:
                raise ParseError("bad rank or score", path, lineno) from None
    run = RunResult()
    for qid, rows in per_query.items():
        rows.sort()
        run.add(qid, [(d, s) for _, d, s in rows])
    return run


def atomic_write_bytes(path, data: bytes) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
