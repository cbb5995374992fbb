"""Cluster tree: structure, trainable node embeddings and leaf document sets."""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .core import Corpus
from .errors import (
    ConfigError,
    DimensionMismatch,
    DocNotIndexed,
    IoFailure,
    MagicMismatch,
    StructureInvalid,
    TruncatedFile,
    VersionUnsupported,
)
from .kmeans import kmeans

TREE_MAGIC = b"JTRT"
TREE_VERSION = 1


@dataclass
class TreeNode:
    node_id: int
    parent: Optional[int]
    children: List[int]
    level: int

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(eq=False)
class TreeIndex:
    """Node hierarchy plus per-node embeddings and per-leaf document sets.

    ``embeddings[i]`` is the trainable vector of node ``i``.  Node ids are
    breadth-first with the root at 0 and never change after construction.
    """

    nodes: List[TreeNode]
    embeddings: np.ndarray
    leaf_docs: Dict[int, np.ndarray]
    beta: int
    gamma: int
    n_docs: int
    version: int = TREE_VERSION
    _doc_leaves: Optional[List[List[int]]] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def leaf_ids(self) -> List[int]:
        return sorted(self.leaf_docs)

    @property
    def num_leaves(self) -> int:
        return len(self.leaf_docs)

    @property
    def depth(self) -> int:
        """Number of levels (a root-only tree has depth 1)."""
        return max(n.level for n in self.nodes) + 1

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def doc_leaves(self, doc: int) -> List[int]:
        if self._doc_leaves is None:
            table: List[List[int]] = [[] for _ in range(self.n_docs)]
            for leaf in self.leaf_ids:
                for d in self.leaf_docs[leaf]:
                    table[int(d)].append(leaf)
            self._doc_leaves = table
        if not 0 <= doc < self.n_docs or not self._doc_leaves[doc]:
            raise DocNotIndexed(f"document {doc} is not in any leaf")
        return self._doc_leaves[doc]

    def siblings(self, node_id: int) -> List[int]:
        parent = self.nodes[node_id].parent
        if parent is None:
            return []
        return [c for c in self.nodes[parent].children if c != node_id]

    def ancestors(self, node_id: int) -> List[int]:
        """Ancestors of ``node_id`` excluding the root, root side first."""
        out = []
        cur = self.nodes[node_id].parent
        while cur is not None and cur != 0:
            out.append(cur)
            cur = self.nodes[cur].parent
        return out[::-1]

    def nodes_at_level(self, level: int) -> List[int]:
        return [n.node_id for n in self.nodes if n.level == level]

    def with_leaf_docs(self, leaf_docs: Mapping[int, Sequence[int]]) -> "TreeIndex":
        """Copy of this tree with a new document assignment; structure and embeddings kept."""
        new = TreeIndex(
            nodes=[TreeNode(n.node_id, n.parent, list(n.children), n.level) for n in self.nodes],
            embeddings=self.embeddings.copy(),
            leaf_docs={int(k): np.unique(np.asarray(v, dtype=np.int64)) for k, v in leaf_docs.items()},
            beta=self.beta,
            gamma=self.gamma,
            n_docs=self.n_docs,
        )
        new.validate()
        return new

    def copy(self) -> "TreeIndex":
        return self.with_leaf_docs(self.leaf_docs)

    def validate(self, max_multiplicity: Optional[int] = None) -> None:
        """Raise StructureInvalid unless every structural invariant holds."""
        nodes = self.nodes
        if not nodes:
            raise StructureInvalid("tree has no nodes")
        if self.embeddings.shape[0] != len(nodes):
            raise StructureInvalid("embedding rows do not match node count")
        for i, node in enumerate(nodes):
            if node.node_id != i:
                raise StructureInvalid(f"node {i} carries id {node.node_id}")
            if i == 0:
                if node.parent is not None or node.level != 0:
                    raise StructureInvalid("root must have no parent and level 0")
            else:
                p = node.parent
                if p is None or not 0 <= p < len(nodes):
                    raise StructureInvalid(f"node {i} has invalid parent {p}")
                if i not in nodes[p].children:
                    raise StructureInvalid(f"node {i} missing from its parent's children")
                if nodes[p].level + 1 != node.level:
                    raise StructureInvalid(f"node {i} level inconsistent with parent")
            for c in node.children:
                if not 0 < c < len(nodes) or nodes[c].parent != i:
                    raise StructureInvalid(f"node {i} has invalid child {c}")
            if node.children and len(node.children) != self.beta:
                raise StructureInvalid(f"internal node {i} has {len(node.children)} children, expected {self.beta}")
        leaves = {n.node_id for n in nodes if not n.children}
        if set(self.leaf_docs) != leaves:
            raise StructureInvalid("leaf_docs keys differ from the tree's leaves")
        counts = np.zeros(self.n_docs, dtype=np.int64)
        for leaf, docs in self.leaf_docs.items():
            docs = np.asarray(docs)
            if docs.size and (docs[0] < 0 or docs[-1] >= self.n_docs):
                raise StructureInvalid(f"leaf {leaf} holds out-of-range documents")
            if docs.size > 1 and np.any(np.diff(docs) <= 0):
                raise StructureInvalid(f"leaf {leaf} documents not sorted/unique")
            counts[docs] += 1
        if np.any(counts == 0):
            raise StructureInvalid(f"{int((counts == 0).sum())} documents are in no leaf")
        if max_multiplicity is not None and counts.max() > max_multiplicity:
            raise StructureInvalid(f"a document appears in {counts.max()} leaves (limit {max_multiplicity})")

    def multiplicity(self) -> np.ndarray:
        counts = np.zeros(self.n_docs, dtype=np.int64)
        for docs in self.leaf_docs.values():
            counts[docs] += 1
        return counts


def build_tree(
    corpus: Corpus,
    beta: int,
    gamma: int,
    rng: np.random.Generator,
    max_iters: int = 25,
    normalize: bool = False,
) -> TreeIndex:
    """Recursively split every node holding more than ``gamma`` docs into ``beta`` k-means clusters.

    Node embeddings start as the centroid of the documents under the node.
    With ``normalize`` the clustering runs on unit-length copies of the
    embeddings; the node embeddings are still means of the raw vectors.
    """
    if beta < 2:
        raise ConfigError(f"beta must be >= 2, got {beta}")
    if gamma < 1:
        raise ConfigError(f"gamma must be >= 1, got {gamma}")
    emb = corpus.embeddings.astype(np.float64)
    n = corpus.n
    clust = emb
    if normalize:
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        clust = emb / np.where(norms > 0, norms, 1.0)

    nodes: List[TreeNode] = [TreeNode(0, None, [], 0)]
    vectors: List[np.ndarray] = [emb.mean(axis=0)]
    members: Dict[int, np.ndarray] = {0: np.arange(n, dtype=np.int64)}
    leaf_docs: Dict[int, np.ndarray] = {}

    queue = deque([0])
    while queue:
        nid = queue.popleft()
        docs = members.pop(nid)
        if docs.size <= gamma:
            leaf_docs[nid] = docs
            continue
        result = kmeans(clust[docs], beta, max_iters=max_iters, rng=rng)
        for c in range(beta):
            cid = len(nodes)
            nodes.append(TreeNode(cid, nid, [], nodes[nid].level + 1))
            nodes[nid].children.append(cid)
            child_docs = np.sort(docs[result.assignment == c])
            vectors.append(result.centroids[c] if not normalize else emb[child_docs].mean(axis=0))
            members[cid] = child_docs
            queue.append(cid)

    tree = TreeIndex(
        nodes=nodes,
        embeddings=np.asarray(vectors, dtype=np.float32),
        leaf_docs=leaf_docs,
        beta=beta,
        gamma=gamma,
        n_docs=n,
    )
    tree.validate(max_multiplicity=1)
    return tree


def node_score(node_embedding, query_embedding) -> float:
    """Inner product between a node embedding and an encoded query."""
    a = np.asarray(node_embedding, dtype=np.float64)
    b = np.asarray(query_embedding, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"node dim {a.shape} vs query dim {b.shape}")
    return float((a * b).sum())


def positive_path(tree: TreeIndex, doc: int, query_embedding) -> List[int]:
    """Leaf containing ``doc`` plus its non-root ancestors, root side first.

    A document living in several leaves is routed through the containing leaf
    that scores highest against ``query_embedding`` (lowest id on ties).
    """
    leaves = tree.doc_leaves(doc)
    if len(leaves) == 1:
        leaf = leaves[0]
    else:
        q = np.asarray(query_embedding, dtype=np.float64)
        if q.shape != (tree.dim,):
            raise DimensionMismatch(f"query dim {q.shape} vs tree dim {tree.dim}")
        scores = (tree.embeddings[leaves].astype(np.float64) * q).sum(axis=1)
        leaf = leaves[int(np.argmax(scores))]
    if leaf == 0:
        return []
    return tree.ancestors(leaf) + [leaf]


# -- serialization -------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIQ")


def save_tree(tree: TreeIndex, path) -> None:
    """Write the binary tree file.

    Layout: magic "JTRT" | version u32 | beta u32 | gamma u32 | D u32 |
    node count u64 | per node (id u64, parent i64, level u32, child count u32,
    child ids u64[], embedding f32[D]) | leaf count u64 | per leaf (id u64,
    doc count u64, doc indices u64[]).  Little-endian.
    """
    parts = [_HEADER.pack(TREE_MAGIC, TREE_VERSION, tree.beta, tree.gamma, tree.dim, len(tree.nodes))]
    emb = np.ascontiguousarray(tree.embeddings, dtype="<f4")
    for node in tree.nodes:
        parent = -1 if node.parent is None else node.parent
        parts.append(struct.pack("<QqII", node.node_id, parent, node.level, len(node.children)))
        parts.append(np.asarray(node.children, dtype="<u8").tobytes())
        parts.append(emb[node.node_id].tobytes())
    leaves = tree.leaf_ids
    parts.append(struct.pack("<Q", len(leaves)))
    for leaf in leaves:
        docs = np.asarray(tree.leaf_docs[leaf], dtype="<u8")
        parts.append(struct.pack("<QQ", leaf, docs.size))
        parts.append(docs.tobytes())
    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedFile(f"{self.path}: unexpected end of file")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        item = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(item * count), dtype=dtype).copy()


def load_tree(path) -> TreeIndex:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if raw[:4] != TREE_MAGIC:
        raise MagicMismatch(f"{path}: not a tree file")
    r = _Reader(raw, path)
    _, version, beta, gamma, dim, n_nodes = r.unpack(_HEADER.format)
    if version != TREE_VERSION:
        raise VersionUnsupported(f"{path}: tree version {version} not supported")
    nodes = []
    emb = np.zeros((n_nodes, dim), dtype=np.float32)
    for i in range(n_nodes):
        node_id, parent, level, n_children = r.unpack("<QqII")
        children = [int(c) for c in r.array("<u8", n_children)]
        if node_id != i:
            raise StructureInvalid(f"{path}: node record {i} has id {node_id}")
        emb[i] = r.array("<f4", dim)
        nodes.append(TreeNode(int(node_id), None if parent < 0 else int(parent), children, int(level)))
    (n_leaves,) = r.unpack("<Q")
    leaf_docs = {}
    max_doc = -1
    for _ in range(n_leaves):
        leaf, count = r.unpack("<QQ")
        docs = r.array("<u8", count).astype(np.int64)
        if int(leaf) in leaf_docs:
            raise StructureInvalid(f"{path}: leaf {leaf} listed twice")
        leaf_docs[int(leaf)] = docs
        if docs.size:
            max_doc = max(max_doc, int(docs.max()))
    if r.pos != len(raw):
        raise TruncatedFile(f"{path}: {len(raw) - r.pos} trailing bytes")
    tree = TreeIndex(nodes, emb, leaf_docs, int(beta), int(gamma), max_doc + 1)
    tree.validate()
    return tree
