"""Command-line pipeline: gen, build, train, recluster, search, eval, ablation.

Every subcommand reads one ``key = value`` config file (``--config``); any
key can be overridden with ``--key value``.  Exit codes: 0 ok, 2 config
error, 3 data error, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from contextlib import contextmanager
from dataclasses import fields
from pathlib import Path
from typing import Dict, List

from filelock import FileLock

from . import io
from .config import PipelineConfig, load_config
from .encoder import QueryEncoder, load_encoder, save_encoder
from .errors import ConfigError, TreeAnnError
from .metrics import evaluate, measure_aqt
from .pipeline import (
    build_stage,
    format_ablation,
    initial_encoder,
    recluster_stage,
    run_ablation,
    train_stage,
)
from .retrieval import search_queries
from .synthetic import generate_blobs, split_queries
from .tree import load_tree, save_tree

log = logging.getLogger("treeann")

_PATH_KEYS = ("corpus", "queries", "qrels", "dev_queries", "dev_qrels", "index", "encoder", "run", "report", "train_report", "score_dump", "ablation_report", "out_dir")


@contextmanager
def index_lock(cfg: PipelineConfig):
    if not cfg.index:
        raise ConfigError("config key 'index' is not set")
    with FileLock(cfg.index + ".lock"):
        yield


def _eval_split(cfg: PipelineConfig):
    """(queries, qrels) used for search/eval: the dev split when configured."""
    if cfg.dev_queries:
        return "dev_queries", "dev_qrels"
    return "queries", "qrels"


def _load_encoder_or_identity(cfg: PipelineConfig, corpus, queries) -> QueryEncoder:
    if cfg.encoder and Path(cfg.encoder).exists():
        return load_encoder(cfg.encoder)
    return initial_encoder(corpus, queries, cfg)


def cmd_gen(cfg: PipelineConfig, args) -> int:
    if not cfg.out_dir:
        raise ConfigError("config key 'out_dir' is not set")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus, queries, qrels = generate_blobs(cfg.blob_spec())
    train_q, train_r, dev_q, dev_r = split_queries(queries, qrels, cfg.num_train)
    io.save_embeddings(corpus, out / "corpus.jtrv")
    io.save_queries(train_q, out / "train_queries.jtrv")
    io.save_qrels(train_r, out / "train.qrels")
    io.save_queries(dev_q, out / "dev_queries.jtrv")
    io.save_qrels(dev_r, out / "dev.qrels")
    paths = {
        "corpus": "corpus.jtrv",
        "queries": "train_queries.jtrv",
        "qrels": "train.qrels",
        "dev_queries": "dev_queries.jtrv",
        "dev_qrels": "dev.qrels",
        "index": "index.jtrt",
        "encoder": "encoder.jtre",
        "run": "run.tsv",
        "report": "report.tsv",
        "train_report": "train_report.tsv",
    }
    lines = ["# generated by 'treeann gen'\n"]
    lines += [f"{k} = {v}\n" for k, v in paths.items()]
    for f in fields(PipelineConfig):
        if f.name not in _PATH_KEYS:
            lines.append(f"{f.name} = {getattr(cfg, f.name)}\n")
    (out / "pipeline.cfg").write_text("".join(lines), encoding="utf-8")
    print(f"wrote {corpus.n} docs, {len(train_q)} train / {len(dev_q)} dev queries to {out}")
    return 0


def cmd_build(cfg: PipelineConfig, args) -> int:
    cfg.require("corpus")
    corpus = io.load_embeddings(cfg.corpus)
    with index_lock(cfg):
        tree = build_stage(corpus, cfg)
        save_tree(tree, cfg.index)
        if cfg.encoder:
            save_encoder(QueryEncoder.identity(corpus.dim, trainable=cfg.encoder_trainable), cfg.encoder)
    print(f"built tree: {len(tree.nodes)} nodes, {tree.num_leaves} leaves, depth {tree.depth} -> {cfg.index}")
    return 0


def cmd_train(cfg: PipelineConfig, args) -> int:
    cfg.require("corpus", "queries", "qrels", "index")
    if not cfg.encoder:
        raise ConfigError("config key 'encoder' is not set")
    corpus = io.load_embeddings(cfg.corpus)
    queries = io.load_queries(cfg.queries)
    qrels = io.load_qrels(cfg.qrels)
    with index_lock(cfg):
        tree = load_tree(cfg.index)
        encoder = _load_encoder_or_identity(cfg, corpus, queries)
        report = train_stage(tree, encoder, queries, qrels, corpus, cfg)
        save_tree(tree, cfg.index)
        save_encoder(encoder, cfg.encoder)
    text = "".join(line + "\n" for line in report.lines())
    if cfg.train_report:
        Path(cfg.train_report).write_text(text, encoding="utf-8")
    sys.stdout.write("epoch\tmean_loss\tskipped\n" + text)
    return 0


def cmd_recluster(cfg: PipelineConfig, args) -> int:
    cfg.require("corpus", "queries", "qrels", "index")
    corpus = io.load_embeddings(cfg.corpus)
    queries = io.load_queries(cfg.queries)
    qrels = io.load_qrels(cfg.qrels)
    with index_lock(cfg):
        tree = load_tree(cfg.index)
        encoder = _load_encoder_or_identity(cfg, corpus, queries)
        new_tree = recluster_stage(tree, encoder, queries, qrels, corpus, cfg)
        save_tree(new_tree, cfg.index)
    mult = new_tree.multiplicity()
    print(f"reclustered with lambda={cfg.lam}: mean leaves per doc {mult.mean():.3f}, max {mult.max()}")
    return 0


def cmd_search(cfg: PipelineConfig, args) -> int:
    qkey, _ = _eval_split(cfg)
    cfg.require("corpus", qkey, "index")
    if not cfg.run:
        raise ConfigError("config key 'run' is not set")
    corpus = io.load_embeddings(cfg.corpus)
    queries = io.load_queries(getattr(cfg, qkey))
    with index_lock(cfg):
        tree = load_tree(cfg.index)
    encoder = _load_encoder_or_identity(cfg, corpus, queries)
    rows = None
    if args.query != "all":
        rows = [queries.index_of(args.query)]
    run = search_queries(tree, encoder, queries, corpus, cfg.beam_b, cfg.top_k, rows=rows)
    io.save_run(run, cfg.run)
    print(f"wrote {len(run)} rankings to {cfg.run}")
    return 0


def cmd_eval(cfg: PipelineConfig, args) -> int:
    qkey, rkey = _eval_split(cfg)
    cfg.require(rkey)
    qrels = io.load_qrels(getattr(cfg, rkey))
    aqt = None
    if args.oracle:
        cfg.require("corpus", qkey)
        corpus = io.load_embeddings(cfg.corpus)
        queries = io.load_queries(getattr(cfg, qkey))
        encoder = _load_encoder_or_identity(cfg, corpus, queries)
        run = search_queries(None, encoder, queries, corpus, cfg.beam_b, cfg.top_k)
    else:
        cfg.require("run")
        run = io.load_run(cfg.run)
    if args.aqt:
        cfg.require("corpus", qkey, "index")
        corpus = io.load_embeddings(cfg.corpus)
        queries = io.load_queries(getattr(cfg, qkey))
        encoder = _load_encoder_or_identity(cfg, corpus, queries)
        aqt = measure_aqt(load_tree(cfg.index), encoder, queries, corpus, cfg.beam_b, cfg.top_k)
    report = evaluate(run, qrels, cfg.top_k, cfg.top_k, cfg.k_ndcg, aqt)
    if cfg.report:
        Path(cfg.report).write_text(report.to_lines(), encoding="utf-8")
    sys.stdout.write(report.to_table())
    return 0


def cmd_ablation(cfg: PipelineConfig, args) -> int:
    cfg.require("corpus", "queries", "qrels", "dev_queries", "dev_qrels")
    corpus = io.load_embeddings(cfg.corpus)
    rows = run_ablation(
        corpus,
        io.load_queries(cfg.queries),
        io.load_qrels(cfg.qrels),
        io.load_queries(cfg.dev_queries),
        io.load_qrels(cfg.dev_qrels),
        cfg,
        with_latency=not args.no_latency,
    )
    table = format_ablation(rows)
    if cfg.ablation_report:
        Path(cfg.ablation_report).write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "build": cmd_build,
    "train": cmd_train,
    "recluster": cmd_recluster,
    "search": cmd_search,
    "eval": cmd_eval,
    "ablation": cmd_ablation,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treeann", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "write a synthetic blob corpus, query splits and a pipeline.cfg",
        "build": "build the cluster tree and an identity encoder",
        "train": "jointly train node embeddings and the encoder",
        "recluster": "reassign documents to leaves (overlap up to lambda)",
        "search": "run beam-search retrieval and write a run file",
        "eval": "score a run file (or the exact oracle) against qrels",
        "ablation": "run the Tree / +Joint / +Reorganize / +Overlapped ladder",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", "-c", help="key = value config file")
        if name == "search":
            p.add_argument("--query", default="all", help="query id, or 'all'")
        if name == "eval":
            p.add_argument("--oracle", action="store_true", help="evaluate exact brute-force retrieval")
            p.add_argument("--aqt", action="store_true", help="also time tree retrieval (not reproducible)")
        if name == "ablation":
            p.add_argument("--no-latency", action="store_true", help="skip AQT measurement")
    return parser


def parse_overrides(extra: List[str]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for --{key}")
            value = extra[i + 1]
            i += 2
        out[key] = value
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config, parse_overrides(extra))
        return COMMANDS[args.command](cfg, args)
    except TreeAnnError as exc:
        print(f"treeann {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
