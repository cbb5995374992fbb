"""Stage functions shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional

from .config import PipelineConfig
from .core import Corpus, Qrels, QuerySet, make_rng
from .encoder import QueryEncoder
from .metrics import MetricReport, evaluate, measure_aqt
from .recluster import recluster
from .retrieval import search_queries
from .training import TrainReport, train
from .tree import TreeIndex, build_tree

log = logging.getLogger(__name__)

STAGE_TREE = "Tree"
STAGE_JOINT = "+Joint Optimization"
STAGE_REORG = "+Reorganize clusters"
STAGE_OVERLAP = "+Overlapped clustering"


def build_stage(corpus: Corpus, cfg: PipelineConfig) -> TreeIndex:
    return build_tree(
        corpus, cfg.beta, cfg.gamma, make_rng(cfg.seed),
        max_iters=cfg.max_iters, normalize=cfg.normalize_for_clustering,
    )


def initial_encoder(corpus: Corpus, queries: QuerySet, cfg: PipelineConfig) -> QueryEncoder:
    return QueryEncoder.identity(queries.dim, corpus.dim, trainable=cfg.encoder_trainable)


def train_stage(tree: TreeIndex, encoder: QueryEncoder, queries: QuerySet, qrels: Qrels, corpus: Corpus, cfg: PipelineConfig) -> TrainReport:
    return train(tree, encoder, queries, qrels, cfg.train_config(), corpus)


def recluster_stage(
    tree: TreeIndex,
    encoder: QueryEncoder,
    queries: QuerySet,
    qrels: Qrels,
    corpus: Corpus,
    cfg: PipelineConfig,
    lam: Optional[int] = None,
) -> TreeIndex:
    return recluster(tree, encoder, queries, corpus, cfg.recluster_config(lam), qrels=qrels, score_dump=cfg.score_dump or None)


def evaluate_stage(
    tree: Optional[TreeIndex],
    encoder: QueryEncoder,
    queries: QuerySet,
    qrels: Qrels,
    corpus: Corpus,
    cfg: PipelineConfig,
    b: Optional[int] = None,
    with_latency: bool = False,
) -> MetricReport:
    b = cfg.beam_b if b is None else b
    run = search_queries(tree, encoder, queries, corpus, b, cfg.top_k)
    aqt = None
    if with_latency and tree is not None:
        aqt = measure_aqt(tree, encoder, queries, corpus, b, cfg.top_k)
    return evaluate(run, qrels, cfg.top_k, cfg.top_k, cfg.k_ndcg, aqt)


@dataclass
class StageResult:
    name: str
    report: MetricReport
    tree: TreeIndex
    encoder: QueryEncoder


def run_ablation(
    corpus: Corpus,
    train_queries: QuerySet,
    train_qrels: Qrels,
    dev_queries: QuerySet,
    dev_qrels: Qrels,
    cfg: PipelineConfig,
    with_latency: bool = True,
) -> List[StageResult]:
    """Tree -> +Joint Optimization -> +Reorganize clusters (lambda=1) -> +Overlapped clustering (lambda=2).

    Both reclustering variants start from the jointly optimized model and are
    retrained after the reassignment.
    """
    out: List[StageResult] = []

    def record(name, tree, enc):
        rep = evaluate_stage(tree, enc, dev_queries, dev_qrels, corpus, cfg, with_latency=with_latency)
        log.info("%s: R@%d=%.4f MRR@%d=%.4f", name, cfg.top_k, rep.recall_at_k, cfg.top_k, rep.mrr_at_k)
        out.append(StageResult(name, rep, tree, enc))

    tree = build_stage(corpus, cfg)
    enc = initial_encoder(corpus, train_queries, cfg)
    record(STAGE_TREE, tree.copy(), enc.copy())

    train_stage(tree, enc, train_queries, train_qrels, corpus, cfg)
    record(STAGE_JOINT, tree.copy(), enc.copy())

    for name, lam in ((STAGE_REORG, 1), (STAGE_OVERLAP, 2)):
        t2 = recluster_stage(tree, enc, train_queries, train_qrels, corpus, cfg, lam=lam)
        e2 = enc.copy()
        train_stage(t2, e2, train_queries, train_qrels, corpus, cfg)
        record(name, t2, e2)
    return out


def format_ablation(rows: List[StageResult]) -> str:
    if not rows:
        return ""
    k = rows[0].report.k_mrr
    header = f"{'Model':<24} {'MRR@' + str(k):>9} {'R@' + str(rows[0].report.k_recall):>9} {'AQT(ms)':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        aqt = f"{r.report.aqt_ms:.3f}" if r.report.aqt_ms is not None else "-"
        lines.append(f"{r.name:<24} {r.report.mrr_at_k:>9.4f} {r.report.recall_at_k:>9.4f} {aqt:>9}")
    return "\n".join(lines) + "\n"
