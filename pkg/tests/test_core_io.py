import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treeann import io
from treeann.core import Corpus, Qrels, QuerySet, RunResult, SparseBinaryMatrix, make_rng, spawn_rng
from treeann.errors import (
    DataError,
    DuplicatePair,
    MagicMismatch,
    NonFiniteValue,
    ParseError,
    ShapeMismatch,
    TruncatedFile,
    UnknownId,
    VersionUnsupported,
)


def _header(n, d, magic=b"JTRV", version=1):
    return struct.pack("<4sIQII", magic, version, n, d, 0)


def test_load_well_formed(tmp_path):
    p = tmp_path / "e.jtrv"
    p.write_bytes(_header(2, 3) + np.arange(6, dtype="<f4").tobytes())
    c = io.load_embeddings(p)
    assert (c.n, c.dim) == (2, 3)
    assert c.doc_ids == ("0", "1")
    np.testing.assert_array_equal(c.embeddings.ravel(), np.arange(6))


def test_short_payload_is_truncated(tmp_path):
    p = tmp_path / "e.jtrv"
    p.write_bytes(_header(2, 3) + np.arange(5, dtype="<f4").tobytes())
    with pytest.raises(TruncatedFile):
        io.load_embeddings(p)


def test_trailing_bytes_rejected(tmp_path):
    p = tmp_path / "e.jtrv"
    p.write_bytes(_header(1, 2) + np.zeros(3, dtype="<f4").tobytes())
    with pytest.raises(TruncatedFile):
        io.load_embeddings(p)


@pytest.mark.parametrize(
    "raw, exc",
    [
        (_header(1, 1, magic=b"NOPE") + b"\0" * 4, MagicMismatch),
        (_header(1, 1, version=2) + b"\0" * 4, VersionUnsupported),
        (b"JTRV\x01", TruncatedFile),
        (_header(1, 1) + np.array([np.nan], dtype="<f4").tobytes(), NonFiniteValue),
        (_header(1, 1) + np.array([np.inf], dtype="<f4").tobytes(), NonFiniteValue),
    ],
)
def test_load_errors(tmp_path, raw, exc):
    p = tmp_path / "bad.jtrv"
    p.write_bytes(raw)
    with pytest.raises(exc):
        io.load_embeddings(p)


def test_save_size(tmp_path):
    p = tmp_path / "one.jtrv"
    io.save_embeddings(Corpus.from_array([[0.0, 1.0]]), p)
    raw = p.read_bytes()
    assert len(raw) == 24 + 8
    assert raw[:4] == b"JTRV"


def test_empty_corpus_rejected_at_construction():
    with pytest.raises(DataError):
        Corpus.from_array(np.zeros((0, 4)))


def test_byte_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    src = tmp_path / "a.jtrv"
    src.write_bytes(_header(5, 7) + rng.standard_normal(35).astype("<f4").tobytes())
    dst = tmp_path / "b.jtrv"
    io.save_embeddings(io.load_embeddings(src), dst, write_sidecar=False)
    assert dst.read_bytes() == src.read_bytes()


def test_random_roundtrips(tmp_path):
    rng = np.random.default_rng(11)
    for trial in range(100):
        n, d = rng.integers(1, 20, size=2)
        ids = [f"doc-{trial}-{i}" for i in range(n)]
        c = Corpus(tuple(ids), rng.standard_normal((n, d)).astype(np.float32))
        p = tmp_path / f"r{trial}.jtrv"
        io.save_embeddings(c, p)
        back = io.load_embeddings(p)
        assert back.doc_ids == c.doc_ids
        assert back.embeddings.tobytes() == c.embeddings.tobytes()


def test_sidecar_order_enforced(tmp_path):
    p = tmp_path / "e.jtrv"
    io.save_embeddings(Corpus.from_array(np.eye(2), ["a", "b"]), p)
    io.sidecar_path(p).write_text("a\t1\nb\t0\n")
    with pytest.raises(ParseError):
        io.load_embeddings(p)


def test_queries_roundtrip(tmp_path):
    q = QuerySet.from_array(np.eye(3, dtype=np.float32), ["x", "y", "z"])
    io.save_queries(q, tmp_path / "q.jtrv")
    back = io.load_queries(tmp_path / "q.jtrv")
    assert back.query_ids == ("x", "y", "z")
    assert back.index_of("y") == 1


class TestQrels:
    def test_single_line(self, tmp_path):
        p = tmp_path / "q.qrels"
        p.write_text("q1\td7\t1\n")
        assert io.load_qrels(p).judgments == {("q1", "d7"): 1}

    def test_duplicate_pair(self, tmp_path):
        p = tmp_path / "q.qrels"
        p.write_text("q1\td7\t1\nq1\td7\t2\n")
        with pytest.raises(DuplicatePair) as err:
            io.load_qrels(p)
        assert err.value.line == 2

    def test_count_and_comments(self, tmp_path):
        p = tmp_path / "q.qrels"
        p.write_text("# header comment\nq1\td1\t1\nq1\td2\t0\n\nq2\td1\t3\n")
        assert len(io.load_qrels(p)) == 3

    @pytest.mark.parametrize("line", ["q1 d1 1", "q1\td1", "q1\td1\tx", "q1\td1\t-1"])
    def test_parse_errors_carry_line(self, tmp_path, line):
        p = tmp_path / "q.qrels"
        p.write_text("q0\td0\t1\n" + line + "\n")
        with pytest.raises(ParseError) as err:
            io.load_qrels(p)
        assert err.value.line == 2

    def test_unknown_id_at_resolution(self):
        qrels = Qrels.from_triples([("q0", "nope", 1)])
        corpus = Corpus.from_array(np.eye(2))
        queries = QuerySet.from_array(np.eye(2), ["q0", "q1"])
        with pytest.raises(UnknownId):
            qrels.relevant_pairs(queries, corpus)

    def test_save_load_roundtrip(self, tmp_path):
        qrels = Qrels.from_triples([("b", "x", 2), ("a", "y", 0), ("a", "x", 1)])
        io.save_qrels(qrels, tmp_path / "r.qrels")
        assert io.load_qrels(tmp_path / "r.qrels") == qrels


def test_run_roundtrip(tmp_path):
    run = RunResult()
    run.add("q1", [("d3", 2.5), ("d1", 2.5), ("d0", -1.0)])
    run.add("q2", [("d9", 0.1)])
    io.save_run(run, tmp_path / "run.tsv")
    text = (tmp_path / "run.tsv").read_text().splitlines()
    assert text[0] == "q1\td3\t1\t2.5"
    assert io.load_run(tmp_path / "run.tsv").rankings == run.rankings


def test_run_rejects_increasing_scores():
    with pytest.raises(DataError):
        RunResult().add("q", [("a", 1.0), ("b", 2.0)])


def test_sparse_binary_matrix_invariants():
    m = SparseBinaryMatrix(2, 4, [[3, 1, 1], []])
    assert m.entries[0].tolist() == [1, 3]
    assert m.nnz() == 2
    np.testing.assert_array_equal(SparseBinaryMatrix.from_dense(m.to_dense()).to_dense(), m.to_dense())
    with pytest.raises(ShapeMismatch):
        SparseBinaryMatrix(1, 2, [[2]])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(0, 9), max_size=6), min_size=1, max_size=6))
def test_sparse_transpose_roundtrip(rows):
    m = SparseBinaryMatrix(len(rows), 10, rows)
    np.testing.assert_array_equal(m.transpose().to_dense(), m.to_dense().T)
    assert m.transpose().transpose() == m


def test_rng_is_reproducible():
    assert make_rng(42).integers(1 << 60, size=5).tolist() == make_rng(42).integers(1 << 60, size=5).tolist()
    a = spawn_rng(42, 0).standard_normal(3)
    b = spawn_rng(42, 1).standard_normal(3)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, spawn_rng(42, 0).standard_normal(3))
