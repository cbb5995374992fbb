"""Tree-structured ANN index for dense retrieval with jointly trained node embeddings."""

from .core import Corpus, Qrels, QuerySet, RunResult, SparseBinaryMatrix, make_rng
from .encoder import QueryEncoder
from .kmeans import KMeansResult, kmeans
from .metrics import MetricReport, evaluate, measure_aqt, mrr_at_k, ndcg_at_k, recall_at_k
from .recluster import ReclusterConfig, build_M, build_Ybar, overlapped_assign, predicted_Yhat, recall_proxy, recluster
from .retrieval import SearchStats, beam_search_leaves, brute_force, retrieve
from .synthetic import BlobSpec, generate_blobs, split_queries
from .training import TrainConfig, TrainingInstance, backward, build_instance, instance_loss, level_loss, train
from .tree import TreeIndex, TreeNode, build_tree, load_tree, node_score, positive_path, save_tree

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "Qrels",
    "QuerySet",
    "RunResult",
    "SparseBinaryMatrix",
    "make_rng",
    "QueryEncoder",
    "KMeansResult",
    "kmeans",
    "MetricReport",
    "evaluate",
    "measure_aqt",
    "mrr_at_k",
    "ndcg_at_k",
    "recall_at_k",
    "ReclusterConfig",
    "build_M",
    "build_Ybar",
    "overlapped_assign",
    "predicted_Yhat",
    "recall_proxy",
    "recluster",
    "SearchStats",
    "beam_search_leaves",
    "brute_force",
    "retrieve",
    "BlobSpec",
    "generate_blobs",
    "split_queries",
    "TrainConfig",
    "TrainingInstance",
    "backward",
    "build_instance",
    "instance_loss",
    "level_loss",
    "train",
    "TreeIndex",
    "TreeNode",
    "build_tree",
    "load_tree",
    "node_score",
    "positive_path",
    "save_tree",
]
