"""Lloyd's k-means with k-means++ seeding and empty-cluster repair."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import ConfigError, KTooLarge


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (k, D) float64
    assignment: np.ndarray  # (M,) int64
    inertia: float
    iterations_run: int
    inertia_history: List[float] = field(default_factory=list)


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (points * points).sum(axis=1)[:, None] - 2.0 * points @ centroids.T + (centroids * centroids).sum(axis=1)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def _plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = points.shape[0]
    chosen = [int(rng.integers(m))]
    closest = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(m, p=closest / total))
        else:
            # every point coincides with a chosen center
            free = np.setdiff1d(np.arange(m), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        np.minimum(closest, ((points - points[nxt]) ** 2).sum(axis=1), out=closest)
    return points[chosen].copy()


def _repair_empty(assignment: np.ndarray, dists: np.ndarray, k: int) -> None:
    counts = np.bincount(assignment, minlength=k)
    for empty in np.flatnonzero(counts == 0):
        own = dists[np.arange(assignment.size), assignment]
        donors = counts[assignment] > 1
        own = np.where(donors, own, -1.0)
        # farthest point; lowest index on ties
        victim = int(np.argmax(own))
        counts[assignment[victim]] -= 1
        assignment[victim] = empty
        counts[empty] += 1


def _means(points: np.ndarray, assignment: np.ndarray, k: int) -> np.ndarray:
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, assignment, points)
    counts = np.bincount(assignment, minlength=k).astype(np.float64)
    return sums / counts[:, None]


def _inertia(points: np.ndarray, centroids: np.ndarray, assignment: np.ndarray) -> float:
    diff = points - centroids[assignment]
    return float((diff * diff).sum())


def kmeans(points, k: int, max_iters: int = 25, rng: np.random.Generator | None = None) -> KMeansResult:
    """Cluster ``points`` (M x D) into ``k`` non-empty clusters.

    Assignment is nearest centroid under squared Euclidean distance, ties to
    the lowest centroid index.  Stops when the assignment repeats or after
    ``max_iters`` Lloyd steps.
    """
    pts = np.asarray(points, dtype=np.float64)
    m = pts.shape[0]
    if k < 1 or max_iters < 1:
        raise ConfigError("kmeans needs k >= 1 and max_iters >= 1")
    if k > m:
        raise KTooLarge(f"k={k} exceeds number of points {m}")
    if rng is None:
        rng = np.random.default_rng(0)

    if k == 1:
        centroids = pts.mean(axis=0, keepdims=True)
        assignment = np.zeros(m, dtype=np.int64)
        inertia = _inertia(pts, centroids, assignment)
        return KMeansResult(centroids, assignment, inertia, 1, [inertia])

    centroids = _plus_plus(pts, k, rng)
    assignment = None
    history: List[float] = []
    it = 0
    for it in range(1, max_iters + 1):
        dists = _sq_dists(pts, centroids)
        new_assignment = np.argmin(dists, axis=1).astype(np.int64)
        _repair_empty(new_assignment, dists, k)
        if assignment is not None and np.array_equal(new_assignment, assignment):
            it -= 1
            break
        assignment = new_assignment
        centroids = _means(pts, assignment, k)
        history.append(_inertia(pts, centroids, assignment))
    return KMeansResult(centroids, assignment, history[-1], max(it, 1), history)
