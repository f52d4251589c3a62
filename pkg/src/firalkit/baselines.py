"""Reference selection strategies the information-based solvers compete with."""

from __future__ import annotations

import numpy as np

from .logistic import ClassProbTable, entropy_scores

__all__ = ["entropy_select", "kmeans_select", "random_select"]


def random_select(pool_idx, budget, seed):
    """Uniform sample without replacement; deterministic per seed."""
    pool_idx = np.asarray(pool_idx, dtype=np.int64)
    if budget > pool_idx.size:
        raise ValueError("budget exceeds pool size")
    rng = np.random.default_rng(seed)
    return rng.choice(pool_idx, size=budget, replace=False)


def entropy_select(table: ClassProbTable, pool_idx, budget):
    """The ``budget`` most uncertain pool points (smallest sum p log p)."""
    pool_idx = np.asarray(pool_idx, dtype=np.int64)
    if budget > pool_idx.size:
        raise ValueError("budget exceeds pool size")
    scores = entropy_scores(table)[pool_idx]
    order = np.argsort(scores, kind="stable")  # stable: ties to lowest index
    return pool_idx[order[:budget]]


def _sq_dists(points, centers):
    return (
        (points**2).sum(axis=1)[:, None]
        - 2.0 * points @ centers.T
        + (centers**2).sum(axis=1)[None, :]
    )


def _kmeans_pp(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = _sq_dists(points, centers[:1])[:, 0]
    for j in range(1, k):
        d2 = np.maximum(d2, 0.0)
        total = d2.sum()
        if total <= 0.0:
            pick = rng.integers(n)
        else:
            pick = rng.choice(n, p=d2 / total)
        centers[j] = points[pick]
        d2 = np.minimum(d2, _sq_dists(points, centers[j : j + 1])[:, 0])
    return centers


def kmeans_select(features, pool_idx, budget, seed, max_sweeps=100):
    """Lloyd's algorithm with k-means++ seeding over the pool.

    Returns the pool point nearest each centroid; duplicates are refilled
    with the next-nearest unused point, so exactly ``budget`` distinct
    indices come back.
    """
    pool_idx = np.asarray(pool_idx, dtype=np.int64)
    if budget > pool_idx.size:
        raise ValueError("budget exceeds pool size")
    if budget == pool_idx.size:
        return pool_idx.copy()
    points = np.asarray(features, dtype=np.float64)[pool_idx]
    rng = np.random.default_rng(seed)

    centers = _kmeans_pp(points, budget, rng)
    assign = np.argmin(_sq_dists(points, centers), axis=1)
    for _ in range(max_sweeps):
        new_centers = centers.copy()
        for j in range(budget):
            members = assign == j
            if members.any():
                new_centers[j] = points[members].mean(axis=0)
        new_assign = np.argmin(_sq_dists(points, new_centers), axis=1)
        centers = new_centers
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    d2 = _sq_dists(points, centers)
    taken = np.zeros(pool_idx.size, dtype=bool)
    chosen = []
    for j in range(budget):
        for pos in np.argsort(d2[:, j], kind="stable"):
            if not taken[pos]:
                taken[pos] = True
                chosen.append(int(pool_idx[pos]))
                break
    return np.asarray(chosen, dtype=np.int64)
