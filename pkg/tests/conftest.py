import numpy as np
import pytest

from treeann import retrieval
from treeann.core import Corpus
from treeann.tree import TreeIndex, TreeNode

# Every beam search / retrieval issued anywhere in the suite is checked
# against the complexity bounds and tallied here.
SEARCH_LOG = {"beam": 0, "retrieve": 0, "violations": []}

# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def _check_bounds(kind, tree, b, stats):
    SEARCH_LOG[kind] += 1
    bound = tree.beta * b * tree.depth
    if stats.node_scores_computed > bound:
        SEARCH_LOG["violations"].append((kind, "nodes", stats.node_scores_computed, bound))
    if stats.leaves_visited > b:
        SEARCH_LOG["violations"].append((kind, "leaves", stats.leaves_visited, b))
    if kind == "retrieve" and stats.doc_scores_computed > stats.candidate_leaf_docs:
        SEARCH_LOG["violations"].append((kind, "docs", stats.doc_scores_computed, stats.candidate_leaf_docs))


@pytest.fixture(autouse=True, scope="session")
def _search_bounds_observer():
    retrieval.add_search_observer(_check_bounds)
    yield
    retrieval.remove_search_observer(_check_bounds)


@pytest.fixture(autouse=True)
def _no_bound_violations():
    before = len(SEARCH_LOG["violations"])
    yield
    assert SEARCH_LOG["violations"][before:] == []


def seven_node_tree(embeddings=None, dim=2):
    """Seven-node binary tree: root 0, level-1 nodes 1 and 2, leaves 3..6 with two docs each."""
    nodes = [
        TreeNode(0, None, [1, 2], 0),
        TreeNode(1, 0, [3, 4], 1),
        TreeNode(2, 0, [5, 6], 1),
        TreeNode(3, 1, [], 2),
        TreeNode(4, 1, [], 2),
        TreeNode(5, 2, [], 2),
        TreeNode(6, 2, [], 2),
    ]
    if embeddings is None:
        embeddings = np.zeros((7, dim), dtype=np.float32)
    leaf_docs = {3: np.array([0, 1]), 4: np.array([2, 3]), 5: np.array([4, 5]), 6: np.array([6, 7])}
    tree = TreeIndex(nodes, np.asarray(embeddings, dtype=np.float32), leaf_docs, beta=2, gamma=2, n_docs=8)
    tree.validate()
    return tree


@pytest.fixture
def seven_node():
    emb = np.array(
        [
            [0.0, 0.0],  # root (never scored)
            [1.0, 0.0],
            [-1.0, 0.0],
            [1.0, 1.0],
            [1.0, -1.0],
            [-1.0, 1.0],
            [-1.0, -1.0],
        ]
    )
    return seven_node_tree(emb)


@pytest.fixture
def blob_corpus():
    rng = np.random.default_rng(3)
    centers = rng.standard_normal((10, 8)) * 5
    pts = np.repeat(centers, 10, axis=0) + 0.1 * rng.standard_normal((100, 8))
    return Corpus.from_array(pts.astype(np.float32))


def pytest_collection_modifyitems(session, config, items):
    # acceptance runs last so its complexity audit covers the whole session
    items.sort(key=lambda item: item.path.name == "test_acceptance.py")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
