import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from golden import GOLDEN, golden_qrels, golden_run
from treeann.core import Corpus, Qrels, QuerySet, RunResult, make_rng
from treeann.encoder import QueryEncoder
from treeann.errors import ConfigError, EmptyQuerySet
from treeann.metrics import MetricReport, dcg, evaluate, measure_aqt, mrr_at_k, ndcg_at_k, recall_at_k
from treeann.retrieval import search_queries
from treeann.tree import build_tree

METRICS = {"mrr": mrr_at_k, "recall": recall_at_k, "ndcg": ndcg_at_k}


def _run(rankings):
    run = RunResult()
    for q, docs in rankings.items():
        run.add(q, [(d, float(-i)) for i, d in enumerate(docs)])
    return run


@pytest.mark.parametrize("key", sorted(GOLDEN))
def test_golden_values(key):
    name, k = key
    assert METRICS[name](golden_run(), golden_qrels(), k) == pytest.approx(GOLDEN[key], abs=1e-9)


class TestMRR:
    def test_rank_one(self):
        assert mrr_at_k(_run({"q": ["a", "b"]}), Qrels.from_triples([("q", "a", 1)]), 100) == 1.0

    def test_rank_three(self):
        assert mrr_at_k(_run({"q": ["x", "y", "a"]}), Qrels.from_triples([("q", "a", 1)]), 100) == pytest.approx(1 / 3)

    def test_micro_suite(self):
        run = _run({"q1": ["a"], "q2": ["x", "b"], "q3": ["y"]})
        qrels = Qrels.from_triples([("q1", "a", 1), ("q2", "b", 1), ("q3", "c", 1)])
        assert mrr_at_k(run, qrels, 100) == pytest.approx((1 + 0.5 + 0) / 3)

    def test_cutoff(self):
        assert mrr_at_k(_run({"q": ["x", "y", "a"]}), Qrels.from_triples([("q", "a", 1)]), 2) == 0.0


class TestRecall:
    def test_all_found(self):
        assert recall_at_k(_run({"q": ["a", "b"]}), Qrels.from_triples([("q", "a", 1), ("q", "b", 2)]), 10) == 1.0

    def test_none_found(self):
        assert recall_at_k(_run({"q": ["x"]}), Qrels.from_triples([("q", "a", 1)]), 10) == 0.0

    def test_half(self):
        qrels = Qrels.from_triples([("q", d, 1) for d in "abcd"])
        assert recall_at_k(_run({"q": ["a", "x", "c"]}), qrels, 10) == 0.5


class TestNDCG:
    def test_ideal(self):
        qrels = Qrels.from_triples([("q", "a", 3), ("q", "b", 2), ("q", "c", 1)])
        assert ndcg_at_k(_run({"q": ["a", "b", "c"]}), qrels, 10) == pytest.approx(1.0)

    def test_zero_gain(self):
        qrels = Qrels.from_triples([("q", "a", 1), ("q", "x", 0)])
        assert ndcg_at_k(_run({"q": ["x", "y"]}), qrels, 10) == 0.0

    def test_graded_example(self):
        qrels = Qrels.from_triples([("q", "a", 3), ("q", "b", 0), ("q", "c", 1)])
        expected = (7 / 1 + 0 + 1 / 2) / (7 / 1 + 1 / math.log2(3))
        assert ndcg_at_k(_run({"q": ["a", "b", "c"]}), qrels, 3) == pytest.approx(expected, abs=1e-12)

    def test_dcg_formula(self):
        assert dcg([3, 0, 1]) == pytest.approx(7 + 0 + 1 / 2)

    def test_unjudged_tail_permutation_invariant(self):
        qrels = Qrels.from_triples([("q", "a", 2), ("q", "b", 1), ("q", "c", 3)])
        head = ["b", "a", "c"]
        tail = [f"u{i}" for i in range(8)]
        rng = np.random.default_rng(0)
        base = ndcg_at_k(_run({"q": head + tail}), qrels, 10)
        for _ in range(10):
            perm = list(rng.permutation(tail))
            assert ndcg_at_k(_run({"q": head + perm}), qrels, 10) == base


class TestExclusionAndErrors:
    def test_unjudged_queries_excluded(self):
        run = _run({"q1": ["a"], "q2": ["b"]})
        qrels = Qrels.from_triples([("q1", "a", 1), ("q2", "b", 0)])
        assert mrr_at_k(run, qrels, 10) == 1.0
        assert evaluate(run, qrels).query_count == 1

    def test_empty(self):
        with pytest.raises(EmptyQuerySet):
            recall_at_k(_run({"q": ["a"]}), Qrels.from_triples([("z", "a", 1)]), 10)

    def test_bad_cutoff(self):
        with pytest.raises(ConfigError):
            mrr_at_k(golden_run(), golden_qrels(), 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 20))
def test_metrics_bounded(seed, k):
    rng = np.random.default_rng(seed)
    docs = [f"d{i}" for i in range(15)]
    rankings, triples = {}, []
    for q in range(int(rng.integers(1, 6))):
        rankings[f"q{q}"] = list(rng.permutation(docs)[: int(rng.integers(1, 15))])
        for d in rng.choice(docs, size=int(rng.integers(1, 5)), replace=False):
            triples.append((f"q{q}", str(d), int(rng.integers(0, 4))))
    if ("q0", "d0") not in {(a, b) for a, b, _ in triples}:
        triples.append(("q0", "d0", 1))
    report = evaluate(_run(rankings), Qrels.from_triples(triples), k, k, k)
    for value in (report.mrr_at_k, report.recall_at_k, report.ndcg_at_k):
        assert 0.0 <= value <= 1.0 + 1e-12


def test_tree_recall_never_beats_oracle(blob_corpus):
    rng = np.random.default_rng(2)
    tree = build_tree(blob_corpus, beta=3, gamma=6, rng=make_rng(2))
    enc = QueryEncoder.identity(blob_corpus.dim)
    queries = QuerySet.from_array(blob_corpus.embeddings[rng.choice(100, 30)] + 0.5 * rng.standard_normal((30, 8)))
    oracle = search_queries(None, enc, queries, blob_corpus, 1, 10)
    # relevance taken from the exact top 10, so the oracle scores recall 1
    qrels = Qrels.from_triples([(q, d, 1) for q, ranked in oracle for d, _ in ranked])
    for b in (1, 2, 4):
        run = search_queries(tree, enc, queries, blob_corpus, b, 10)
        assert recall_at_k(run, qrels, 10) <= recall_at_k(oracle, qrels, 10) == 1.0


class TestReport:
    def test_lines_and_table(self):
        rep = evaluate(golden_run(), golden_qrels(), 10, 10, 10, aqt_ms=1.5)
        lines = rep.to_lines().splitlines()
        assert lines[0].split("\t")[0] == "MRR@10"
        assert float(lines[0].split("\t")[1]) == rep.mrr_at_k
        assert lines[-1] == "AQT_ms\t1.5"
        assert "NDCG@10" in rep.to_table()

    def test_no_aqt_row_by_default(self):
        rep = MetricReport(0.5, 0.5, 0.5, 3)
        assert "AQT" not in rep.to_lines()


@pytest.fixture(scope="module")
def timing_setup():
    rng = np.random.default_rng(0)
    corpus = Corpus.from_array(rng.standard_normal((8192, 32)))
    tree = build_tree(corpus, beta=8, gamma=128, rng=make_rng(0))
    queries = QuerySet.from_array(rng.standard_normal((510, 32)))
    return corpus, tree, queries


class TestAQT:
    def test_needs_queries_after_warmup(self, seven_node):
        corpus = Corpus.from_array(np.ones((8, 2)))
        with pytest.raises(EmptyQuerySet):
            measure_aqt(seven_node, QueryEncoder.identity(2), QuerySet.from_array(np.ones((10, 2))), corpus, 2, 5)

    def test_positive(self, seven_node):
        corpus = Corpus.from_array(np.ones((8, 2)))
        assert measure_aqt(seven_node, QueryEncoder.identity(2), QuerySet.from_array(np.ones((12, 2))), corpus, 2, 5) > 0

    @pytest.mark.slow
    def test_small_beam_is_faster(self, timing_setup):
        corpus, tree, queries = timing_setup
        enc = QueryEncoder.identity(32)
        small = np.median([measure_aqt(tree, enc, queries, corpus, 1, 10) for _ in range(3)])
        full = np.median([measure_aqt(tree, enc, queries, corpus, tree.num_leaves, 10) for _ in range(3)])
        assert small <= full

    @pytest.mark.slow
    def test_stable_across_runs(self, timing_setup):
        corpus, tree, queries = timing_setup
        enc = QueryEncoder.identity(32)
        times = [measure_aqt(tree, enc, queries, corpus, 4, 10) for _ in range(3)]
        assert max(times) <= 1.25 * min(times)
