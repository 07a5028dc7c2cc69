"""K-means (k-means++ seeding) and agglomerative clustering on distance matrices."""

from typing import NamedTuple
import warnings

import numpy as np

from .errors import InvalidArgumentError
from .numerics import _as_float_array, _check_distance_matrix


class KMeansResult(NamedTuple):
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    inertia_history: tuple = ()


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp_init(X, k, gen):
    n = X.shape[0]
    centers = [X[gen.integers(n)]]
    closest = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point already coincides with a centre
            idx = int(gen.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), gen.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(X, centers, max_iter):
    k = centers.shape[0]
    labels = None
    history = []
    for _ in range(max_iter):
        d2 = _sq_dists(X, centers)
        new_labels = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = X[members].mean(axis=0)
            else:
                # re-seed an empty cluster with the worst-served point
                far = int(np.argmax(d2[np.arange(len(X)), labels]))
                centers[j] = X[far]
                labels[far] = j
        history.append(float(((X - centers[labels]) ** 2).sum()))
    inertia = float(((X - centers[labels]) ** 2).sum())
    return labels, centers, inertia, tuple(history)


def kmeans(data, k, rng, n_restarts=10, max_iter=300):
    """Lloyd's algorithm with k-means++ seeding; the best of ``n_restarts`` runs wins.

    Iterates until assignments stop changing.  Ties in inertia across
    restarts keep the earliest restart.
    """
    X = _as_float_array(data, "data")
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not 1 <= k <= n:
        raise InvalidArgumentError(f"k must be in [1, {n}], got {k}")
    if n_restarts < 1:
        raise InvalidArgumentError("n_restarts must be >= 1")
    gen = rng.generator
    best = None
    for _ in range(n_restarts):
        centers = _kmeanspp_init(X, k, gen)
        res = _lloyd(X, centers, max_iter)
        if best is None or res[2] < best[2]:
            best = res
    labels, centers, inertia, history = best
    return KMeansResult(labels.astype(int), centers, inertia, history)


LINKAGES = ("average", "complete", "single")


def linkage_tree(dist, linkage="average"):
    """Full bottom-up merge history.

    Returns a list of ``(a, b, height, size)`` tuples in merge order, using
    scipy's numbering: leaves are ``0..n-1`` and the i-th merge creates
    cluster ``n + i``.  Ties are broken by the lowest (row, column) pair of
    the current cluster ordering.
    """
    merges, _ = _agglomerate(dist, 1, linkage)
    return merges


def agglomerative_cluster(dist, k, linkage="average"):
    """Cut the agglomerative hierarchy at ``k`` clusters.

    Labels are numbered 0..k-1 in order of each cluster's first member.
    """
    _, labels = _agglomerate(dist, k, linkage)
    return labels


def _agglomerate(dist, k, linkage):
    if linkage == "ward":
        warnings.warn("ward linkage needs raw coordinates; falling back to average", stacklevel=3)
        linkage = "average"
    if linkage not in LINKAGES:
        raise InvalidArgumentError(f"unknown linkage {linkage!r}")
    D = _check_distance_matrix(dist).copy()
    n = D.shape[0]
    if not 1 <= k <= n:
        raise InvalidArgumentError(f"k must be in [1, {n}], got {k}")

    members = [[i] for i in range(n)]
    ids = list(range(n))
    merges = []
    labels_at_k = None
    if k == n:
        labels_at_k = np.arange(n)
    next_id = n
    while len(members) > 1:
        m = len(members)
        best = None
        for i in range(m):
            for j in range(i + 1, m):
                if best is None or D[i, j] < best[0]:
                    best = (D[i, j], i, j)
        h, i, j = best
        ni, nj = len(members[i]), len(members[j])
        # Lance-Williams update for the merged row
        if linkage == "average":
            new = (ni * D[i] + nj * D[j]) / (ni + nj)
        elif linkage == "complete":
            new = np.maximum(D[i], D[j])
        else:
            new = np.minimum(D[i], D[j])
        D[i, :] = new
        D[:, i] = new
        D[i, i] = 0.0
        D = np.delete(np.delete(D, j, axis=0), j, axis=1)
        merges.append((ids[i], ids[j], float(h), ni + nj))
        members[i] = members[i] + members[j]
        del members[j]
        ids[i] = next_id
        del ids[j]
        next_id += 1
        if len(members) == k:
            labels_at_k = _labels_from_members(members, n)
    return merges, labels_at_k


def _labels_from_members(members, n):
    labels = np.empty(n, dtype=int)
    order = sorted(members, key=min)
    for lab, group in enumerate(order):
        labels[group] = lab
    return labels
