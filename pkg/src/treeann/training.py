"""Joint training of node embeddings and the query encoder.

Every non-root level on the path to a relevant document contributes one
softmax contrastive term: the path node is the positive, its siblings (plus
optional random same-level nodes) are the negatives.  An instance's loss is
the mean of its level terms.  Gradients are derived by hand and applied with
a lazily-updated AdamW.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import Corpus, Qrels, QuerySet, spawn_rng
from .encoder import QueryEncoder
from .errors import ConfigError, DimensionMismatch, NoTrainingData
from .tree import TreeIndex, positive_path

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    extra_random_negatives: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.extra_random_negatives < 0:
            raise ConfigError("extra_random_negatives must be >= 0")


@dataclass
class TrainingInstance:
    query: int
    doc: int
    positives: List[int]
    negatives: List[List[int]]

    def __len__(self) -> int:
        return len(self.positives)


@dataclass
class Gradients:
    loss: float
    nodes: Dict[int, np.ndarray]
    weight: Optional[np.ndarray]
    bias: Optional[np.ndarray]


@dataclass
class TrainReport:
    epoch_losses: List[float] = field(default_factory=list)
    skipped: int = 0
    node_row_updates: int = 0
    encoder_updates: int = 0
    steps: int = 0

    def lines(self) -> List[str]:
        per_epoch = self.skipped // max(len(self.epoch_losses), 1)
        return [f"{i}\t{loss!r}\t{per_epoch}" for i, loss in enumerate(self.epoch_losses, 1)]


# -- instances -----------------------------------------------------------------


def build_instance(
    tree: TreeIndex,
    encoder: QueryEncoder,
    query_features,
    positive_doc: int,
    query_index: int = -1,
    extra_random_negatives: int = 0,
    rng: Optional[np.random.Generator] = None,
    query_embedding: Optional[np.ndarray] = None,
) -> TrainingInstance:
    """Positive path of ``positive_doc`` with sibling negatives at every level."""
    q = encoder.encode(query_features) if query_embedding is None else query_embedding
    path = positive_path(tree, positive_doc, q)
    negatives = []
    for node in path:
        negs = tree.siblings(node)
        if extra_random_negatives:
            if rng is None:
                raise ConfigError("extra random negatives need an rng")
            taken = set(negs) | {node}
            pool = [n for n in tree.nodes_at_level(tree.nodes[node].level) if n not in taken]
            if pool:
                pick = rng.choice(len(pool), size=min(extra_random_negatives, len(pool)), replace=False)
                negs = negs + [pool[i] for i in sorted(pick)]
        negatives.append(negs)
    return TrainingInstance(query_index, positive_doc, path, negatives)


# -- loss and gradients --------------------------------------------------------


def _level_softmax(q: np.ndarray, pos: np.ndarray, negs: np.ndarray) -> Tuple[float, np.ndarray]:
    """Loss and softmax probabilities, positive first."""
    scores = np.concatenate(([pos @ q], negs @ q)) if negs.size else np.array([pos @ q])
    top = scores.max()
    shifted = scores - top
    log_z = np.log(np.exp(shifted).sum())
    loss = float(log_z - shifted[0])
    probs = np.exp(shifted - log_z)
    return max(loss, 0.0), probs


def level_loss(query_embedding, positive_node_embedding, negative_node_embeddings) -> float:
    """-log softmax probability of the positive node among positive + negatives."""
    q = np.asarray(query_embedding, dtype=np.float64)
    pos = np.asarray(positive_node_embedding, dtype=np.float64)
    negs = np.asarray(negative_node_embeddings, dtype=np.float64).reshape(-1, q.shape[0]) if np.size(negative_node_embeddings) else np.zeros((0, q.shape[0]))
    if pos.shape != q.shape:
        raise DimensionMismatch(f"positive dim {pos.shape} vs query dim {q.shape}")
    if negs.size == 0:
        return 0.0
    return _level_softmax(q, pos, negs)[0]


def _params64(tree: TreeIndex, encoder: QueryEncoder):
    return (
        tree.embeddings.astype(np.float64),
        encoder.weight.astype(np.float64),
        encoder.bias.astype(np.float64),
    )


def loss_and_grad(
    instance: TrainingInstance,
    node_emb: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    x: np.ndarray,
    encoder_grads: bool = True,
) -> Gradients:
    """Instance loss and exact gradients on float64 parameter arrays."""
    q = weight @ x + bias
    n_levels = len(instance.positives)
    grads: Dict[int, np.ndarray] = {}
    dq = np.zeros_like(q)
    total = 0.0
    for pos_id, neg_ids in zip(instance.positives, instance.negatives):
        if not neg_ids:
            continue
        ids = [pos_id] + list(neg_ids)
        rows = node_emb[ids]
        loss, probs = _level_softmax(q, rows[0], rows[1:])
        total += loss
        coef = probs.copy()
        coef[0] -= 1.0
        coef /= n_levels
        for nid, c in zip(ids, coef):
            g = c * q
            if nid in grads:
                grads[nid] = grads[nid] + g
            else:
                grads[nid] = g
        dq += coef @ rows
    loss = total / n_levels if n_levels else 0.0
    if encoder_grads:
        return Gradients(loss, grads, np.outer(dq, x), dq)
    return Gradients(loss, grads, None, None)


def instance_loss(instance: TrainingInstance, tree: TreeIndex, encoder: QueryEncoder, query_features) -> float:
    """Mean level loss over the instance's levels."""
    if not instance.positives:
        raise NoTrainingData("instance has no trainable levels")
    node_emb, w, b = _params64(tree, encoder)
    x = np.asarray(query_features, dtype=np.float64)
    return loss_and_grad(instance, node_emb, w, b, x, encoder_grads=False).loss


def backward(instance: TrainingInstance, tree: TreeIndex, encoder: QueryEncoder, query_features) -> Gradients:
    """Gradients of ``instance_loss`` for touched node rows, encoder weight and bias."""
    if not instance.positives:
        raise NoTrainingData("instance has no trainable levels")
    node_emb, w, b = _params64(tree, encoder)
    x = np.asarray(query_features, dtype=np.float64)
    return loss_and_grad(instance, node_emb, w, b, x, encoder_grads=True)


# -- optimizer -----------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay.

    Node embedding rows are updated lazily: only rows with a gradient in the
    current batch have their moments and values touched.
    """

    def __init__(self, config: TrainConfig, n_rows: int, dim: int, enc_shape: Optional[Tuple[int, int]]):
        self.cfg = config
        self.t = 0
        self.row_t = np.zeros(n_rows, dtype=np.int64)
        self.m_rows = np.zeros((n_rows, dim))
        self.v_rows = np.zeros((n_rows, dim))
        if enc_shape is not None:
            self.m_w = np.zeros(enc_shape)
            self.v_w = np.zeros(enc_shape)
            self.m_b = np.zeros(enc_shape[0])
            self.v_b = np.zeros(enc_shape[0])

    def _update(self, param, grad, m, v, t):
        c = self.cfg
        m *= c.adam_beta1
        m += (1 - c.adam_beta1) * grad
        v *= c.adam_beta2
        v += (1 - c.adam_beta2) * grad * grad
        m_hat = m / (1 - c.adam_beta1 ** t)
        v_hat = v / (1 - c.adam_beta2 ** t)
        if c.weight_decay:
            param *= 1 - c.learning_rate * c.weight_decay
        param -= c.learning_rate * m_hat / (np.sqrt(v_hat) + c.adam_eps)

    def step(self, node_emb, node_grads: Dict[int, np.ndarray], weight=None, grad_w=None, bias=None, grad_b=None) -> int:
        self.t += 1
        rows = sorted(node_grads)
        for r in rows:
            self.row_t[r] += 1
            m, v = self.m_rows[r], self.v_rows[r]
            p = node_emb[r]
            self._update(p, node_grads[r], m, v, self.row_t[r])
        if weight is not None:
            self._update(weight, grad_w, self.m_w, self.v_w, self.t)
            self._update(bias, grad_b, self.m_b, self.v_b, self.t)
        return len(rows)


# -- training loop -------------------------------------------------------------


def training_pairs(queries: QuerySet, qrels: Qrels, corpus: Corpus) -> List[Tuple[int, int]]:
    """Judged-relevant (query row, doc row) pairs restricted to the given query set."""
    qrels = qrels.restrict(queries.query_ids)
    return qrels.relevant_pairs(queries, corpus)


def train(
    tree: TreeIndex,
    encoder: QueryEncoder,
    queries: QuerySet,
    qrels: Qrels,
    config: TrainConfig,
    corpus: Corpus,
) -> TrainReport:
    """Optimize node embeddings (and the encoder, if trainable) in place.

    Pairs are visited in a seeded shuffle each epoch; instances are rebuilt
    from the current parameters at the start of every epoch.  Tree structure
    and leaf document sets are never modified.
    """
    pairs = training_pairs(queries, qrels, corpus)
    if not pairs:
        raise NoTrainingData("no judged relevant (query, doc) pairs")
    if queries.dim != encoder.in_dim or encoder.out_dim != tree.dim:
        raise DimensionMismatch("queries, encoder and tree dimensions disagree")
    report = TrainReport()
    if config.epochs == 0:
        return report

    node_emb, weight, bias = _params64(tree, encoder)
    learn_enc = encoder.trainable
    opt = AdamW(config, node_emb.shape[0], node_emb.shape[1], weight.shape if learn_enc else None)
    feats = queries.features.astype(np.float64)
    pair_arr = np.asarray(pairs, dtype=np.int64)

    for epoch in range(config.epochs):
        rng = spawn_rng(config.seed, epoch)
        order = rng.permutation(len(pair_arr))
        enc_now = QueryEncoder(weight, bias, learn_enc)
        snapshot = TreeIndex(tree.nodes, node_emb.astype(np.float32), tree.leaf_docs, tree.beta, tree.gamma, tree.n_docs)
        snapshot._doc_leaves = tree._doc_leaves
        instances = []
        for idx in order:
            qi, di = pair_arr[idx]
            qe = weight @ feats[qi] + bias
            inst = build_instance(
                snapshot, enc_now, feats[qi], int(di), int(qi),
                config.extra_random_negatives, rng if config.extra_random_negatives else None,
                query_embedding=qe,
            )
            if not inst.positives:
                report.skipped += 1
                continue
            instances.append(inst)
        tree._doc_leaves = snapshot._doc_leaves
        if not instances:
            raise NoTrainingData("every training instance was skipped (tree has a single level)")

        losses = []
        for start in range(0, len(instances), config.batch_size):
            batch = instances[start:start + config.batch_size]
            node_acc: Dict[int, np.ndarray] = {}
            gw = np.zeros_like(weight) if learn_enc else None
            gb = np.zeros_like(bias) if learn_enc else None
            for inst in batch:
                g = loss_and_grad(inst, node_emb, weight, bias, feats[inst.query], encoder_grads=learn_enc)
                losses.append(g.loss)
                for nid, grad in g.nodes.items():
                    if nid in node_acc:
                        node_acc[nid] += grad
                    else:
                        node_acc[nid] = grad.copy()
                if learn_enc:
                    gw += g.weight
                    gb += g.bias
            scale = 1.0 / len(batch)
            for nid in node_acc:
                node_acc[nid] *= scale
            if learn_enc:
                gw *= scale
                gb *= scale
                report.node_row_updates += opt.step(node_emb, node_acc, weight, gw, bias, gb)
                report.encoder_updates += 1
            else:
                report.node_row_updates += opt.step(node_emb, node_acc)
            report.steps += 1
        report.epoch_losses.append(float(np.mean(losses)))
        log.info("epoch %d mean loss %.6f", epoch + 1, report.epoch_losses[-1])

    tree.embeddings[...] = node_emb.astype(np.float32)
    if learn_enc:
        encoder.weight[...] = weight.astype(np.float32)
        encoder.bias[...] = bias.astype(np.float32)
    return report


def beam_retrievability(tree: TreeIndex, encoder: QueryEncoder, queries: QuerySet, pairs: Sequence[Tuple[int, int]], b: int) -> float:
    """Fraction of (query row, doc row) pairs with a containing leaf inside the query's beam."""
    from .retrieval import beam_search_leaves

    if not pairs:
        raise NoTrainingData("no pairs to score")
    hits = 0
    cache: Dict[int, set] = {}
    for qi, di in pairs:
        if qi not in cache:
            leaves, _ = beam_search_leaves(tree, encoder.encode(queries.features[qi]), b)
            cache[qi] = set(leaves)
        if cache[qi].intersection(tree.doc_leaves(di)):
            hits += 1
    return hits / len(pairs)
