"""Independent reference computations used by unit and acceptance tests.

Nothing here imports the implementation under test beyond plain data types;
each oracle is a slow, direct evaluation of the quantity it checks.
"""

import itertools
import math

import numpy as np


def reference_level_loss(q, pos, negs):
    """-log softmax of the positive, summed with math.fsum in plain Python floats."""
    s_pos = math.fsum(a * b for a, b in zip(q, pos))
    scores = [s_pos] + [math.fsum(a * b for a, b in zip(q, n)) for n in negs]
    if len(scores) == 1:
        return 0.0
    m = max(scores)
    z = math.fsum(math.exp(s - m) for s in scores)
    return -(s_pos - m - math.log(z))


def reference_instance_loss(node_emb, weight, bias, x, positives, negatives):
    q = weight @ x + bias
    terms = [reference_level_loss(q, node_emb[p], node_emb[list(n)]) for p, n in zip(positives, negatives)]
    return math.fsum(terms) / len(terms)


def finite_difference_grads(node_emb, weight, bias, x, positives, negatives, h=1e-3):
    """Central differences for every touched node row, the weight and the bias."""
    def f(ne, w, b):
        return reference_instance_loss(ne, w, b, x, positives, negatives)

    touched = sorted(set(positives) | {n for level in negatives for n in level})
    node_grads = {}
    for nid in touched:
        g = np.zeros(node_emb.shape[1])
        for k in range(node_emb.shape[1]):
            up, down = node_emb.copy(), node_emb.copy()
            up[nid, k] += h
            down[nid, k] -= h
            g[k] = (f(up, weight, bias) - f(down, weight, bias)) / (2 * h)
        node_grads[nid] = g
    gw = np.zeros_like(weight)
    for i, j in itertools.product(range(weight.shape[0]), range(weight.shape[1])):
        up, down = weight.copy(), weight.copy()
        up[i, j] += h
        down[i, j] -= h
        gw[i, j] = (f(node_emb, up, bias) - f(node_emb, down, bias)) / (2 * h)
    gb = np.zeros_like(bias)
    for i in range(bias.shape[0]):
        up, down = bias.copy(), bias.copy()
        up[i] += h
        down[i] -= h
        gb[i] = (f(node_emb, weight, up) - f(node_emb, weight, down)) / (2 * h)
    return node_grads, gw, gb


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest |a - n| / max(|a|, |n|), with tiny entries measured against ``floor``."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def exhaustive_relaxed_max(ybar, m, lam):
    """max over row-wise subsets (1..lam leaves per doc) of Tr(Ybar^T M C^T).

    ``ybar`` is L x N, ``m`` is L x K, both dense 0/1. Returns the optimum and
    one maximizing dense N x K assignment.
    """
    t = ybar.T.astype(np.int64) @ m.astype(np.int64)
    n_docs, k = t.shape
    choices = [c for size in range(1, min(lam, k) + 1) for c in itertools.combinations(range(k), size)]
    best_total = 0
    best = np.zeros((n_docs, k), dtype=np.int64)
    # rows are independent, so maximize each row by enumeration and check the
    # sum against a full joint enumeration when it is small enough
    for d in range(n_docs):
        row_best, row_choice = -1, None
        for c in choices:
            v = int(t[d, list(c)].sum())
            if v > row_best:
                row_best, row_choice = v, c
        best_total += row_best
        best[d, list(row_choice)] = 1
    if len(choices) ** n_docs <= 50_000:
        joint = max(
            sum(int(t[d, list(c)].sum()) for d, c in enumerate(combo))
            for combo in itertools.product(choices, repeat=n_docs)
        )
        assert joint == best_total
    return best_total, best


def dense_recall_count(y, yhat):
    """|Y ∩ Ŷ| by explicit double loop."""
    count = 0
    for i in range(y.shape[0]):
        for j in range(y.shape[1]):
            if y[i, j] and yhat[i, j]:
                count += 1
    return count
