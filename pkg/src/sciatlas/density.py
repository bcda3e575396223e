"""Hierarchical density clustering on 2D layout coordinates.

Pipeline: pairwise distances -> mutual-reachability distances (each
pair's distance floored by both core distances) -> minimum spanning
tree -> single-linkage merge tree -> condensed tree keeping only
splits where both sides reach min_cluster_size -> per-cluster
stability -> excess-of-mass flat extraction. Points outside every
selected cluster are labeled NOISE (-1).

Two degenerate inputs get defined behavior instead of errors: fully
coincident points form one cluster, and a selected root cluster keeps
all of its points.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array

NOISE = -1

# Finite stand-in for the infinite density level of zero-distance merges;
# keeps stability sums free of inf - inf.
_LAMBDA_CAP = 1e12


class ClusterError(Exception):
    """Clustering preconditions violated."""


def _mst_prim(mutual_reach: np.ndarray) -> np.ndarray:
    """Minimum spanning tree of a dense distance matrix, rows (u, v, w).

    Ties resolve to the lowest-index vertex, so the tree is deterministic.
    """
    n = len(mutual_reach)
    in_tree = np.zeros(n, dtype=bool)
    best_dist = np.full(n, np.inf)
    best_from = np.zeros(n, dtype=np.int64)
    edges = np.empty((n - 1, 3), dtype=np.float64)
    current = 0
    in_tree[0] = True
    for i in range(n - 1):
        row = mutual_reach[current]
        better = ~in_tree & (row < best_dist)
        best_dist[better] = row[better]
        best_from[better] = current
        masked = np.where(in_tree, np.inf, best_dist)
        nxt = int(np.argmin(masked))
        edges[i] = (best_from[nxt], nxt, best_dist[nxt])
        in_tree[nxt] = True
        current = nxt
    return edges


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.full(2 * n - 1, -1, dtype=np.int64)
        self.size = np.concatenate([np.ones(n, dtype=np.int64),
                                    np.zeros(n - 1, dtype=np.int64)])
        self.next_label = n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != -1:
            root = self.parent[root]
        while self.parent[x] != -1:
            nxt = int(self.parent[x])
            self.parent[x] = root
            x = nxt
        return root

    def union(self, a: int, b: int) -> int:
        label = self.next_label
        self.parent[a] = label
        self.parent[b] = label
        self.size[label] = self.size[a] + self.size[b]
        self.next_label += 1
        return label


def _single_linkage(mst_edges: np.ndarray, n: int) -> np.ndarray:
    """Merge tree rows (left, right, distance, size); new node i gets id n+i.

    Default (introsort) argsort here, not a stable one: equal-weight
    edges must merge in the same order other dense implementations
    produce, or tie-heavy trees condense differently.
    """
    order = np.argsort(mst_edges[:, 2])
    uf = _UnionFind(n)
    linkage = np.empty((n - 1, 4), dtype=np.float64)
    for i, edge_index in enumerate(order):
        u, v, w = mst_edges[edge_index]
        ra = uf.find(int(u))
        rb = uf.find(int(v))
        linkage[i] = (ra, rb, w, uf.size[ra] + uf.size[rb])
        uf.union(ra, rb)
    return linkage


def _subtree_points(linkage: np.ndarray, node: int, n: int) -> list[int]:
    points = []
    stack = [node]
    while stack:
        current = stack.pop()
        if current < n:
            points.append(current)
        else:
            row = linkage[current - n]
            stack.extend((int(row[0]), int(row[1])))
    return points


def _condense_tree(linkage: np.ndarray, n: int, min_cluster_size: int) -> list[tuple]:
    """Rows (parent, child, lambda, child_size); clusters numbered from n.

    A split survives only if both sides hold at least min_cluster_size
    points; otherwise the undersized side's points fall out of the
    parent cluster at that density level.
    """
    root = 2 * n - 2
    relabel = {root: n}
    next_label = n + 1
    rows: list[tuple] = []
    stack = [root]
    while stack:
        node = stack.pop(0)
        if node < n:
            continue
        left, right, dist, _ = linkage[node - n]
        left, right = int(left), int(right)
        lam = 1.0 / dist if dist > 0.0 else _LAMBDA_CAP
        left_size = int(linkage[left - n][3]) if left >= n else 1
        right_size = int(linkage[right - n][3]) if right >= n else 1
        parent_label = relabel[node]
        if left_size >= min_cluster_size and right_size >= min_cluster_size:
            relabel[left] = next_label
            rows.append((parent_label, next_label, lam, left_size))
            next_label += 1
            relabel[right] = next_label
            rows.append((parent_label, next_label, lam, right_size))
            next_label += 1
            stack.extend((left, right))
        elif left_size < min_cluster_size and right_size < min_cluster_size:
            for point in _subtree_points(linkage, left, n):
                rows.append((parent_label, point, lam, 1))
            for point in _subtree_points(linkage, right, n):
                rows.append((parent_label, point, lam, 1))
        else:
            keep, drop = (left, right) if left_size >= min_cluster_size else (right, left)
            relabel[keep] = parent_label
            for point in _subtree_points(linkage, drop, n):
                rows.append((parent_label, point, lam, 1))
            stack.append(keep)
    return rows


def _compute_stability(rows: list[tuple], n: int) -> dict[int, float]:
    """stability(c) = sum over members of (lambda_left - lambda_birth(c))."""
    birth: dict[int, float] = {n: 0.0}
    for parent, child, lam, _ in rows:
        if child >= n:
            birth[child] = lam
    stability: dict[int, float] = defaultdict(float)
    for parent, child, lam, child_size in rows:
        stability[parent] += (lam - birth[parent]) * child_size
    for cluster in birth:
        stability.setdefault(cluster, 0.0)
    return dict(stability)


def _eom_select(rows: list[tuple], stability: dict[int, float], n: int,
                allow_single_cluster: bool) -> set[int]:
    """Excess-of-mass selection: keep a cluster unless its children
    jointly carry more stability."""
    children: dict[int, list[int]] = defaultdict(list)
    for parent, child, _, _ in rows:
        if child >= n:
            children[parent].append(child)
    clusters = sorted(stability, reverse=True)
    is_selected = {c: True for c in clusters}
    stability = dict(stability)
    for cluster in clusters:
        if cluster == n and not allow_single_cluster:
            continue
        child_sum = sum(stability[c] for c in children.get(cluster, ()))
        if children.get(cluster) and child_sum > stability[cluster]:
            is_selected[cluster] = False
            stability[cluster] = child_sum
        else:
            # This cluster wins; nothing below it may be selected.
            stack = list(children.get(cluster, ()))
            while stack:
                c = stack.pop()
                is_selected[c] = False
                stack.extend(children.get(c, ()))
    if not allow_single_cluster:
        is_selected[n] = False
    return {c for c, keep in is_selected.items() if keep}


class HDBSCAN(BaseEstimator, ClusterMixin):
    """Density-based hierarchical clustering with noise.

    Parameters
    ----------
    min_cluster_size : smallest point count a flat cluster may have.
    min_samples : neighbor count defining the core distance (the
        distance to the min_samples-th nearest neighbor, self included).
    allow_single_cluster : permit the tree root itself as the sole
        selected cluster; when it is selected, all points belong to it.
    """

    def __init__(self, min_cluster_size: int = 25, min_samples: int = 10,
                 allow_single_cluster: bool = False):
        self.min_cluster_size = min_cluster_size
        self.min_samples = min_samples
        self.allow_single_cluster = allow_single_cluster

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        n = len(X)
        if self.min_cluster_size < 2:
            raise ClusterError("min_cluster_size must be at least 2")
        if self.min_samples < 1:
            raise ClusterError("min_samples must be at least 1")
        if n < self.min_cluster_size:
            raise ClusterError(
                f"need at least min_cluster_size = {self.min_cluster_size} "
                f"points, got {n}")

        sq = np.sum(X * X, axis=1)
        dist = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
        np.maximum(dist, 0.0, out=dist)
        np.sqrt(dist, out=dist)
        np.fill_diagonal(dist, 0.0)

        if dist.max() == 0.0:
            # All points coincide: one maximally dense cluster.
            self.labels_ = np.zeros(n, dtype=np.int64)
            self.n_clusters_ = 1
            return self

        min_samples = min(self.min_samples, n)
        core = np.partition(dist, min_samples - 1, axis=1)[:, min_samples - 1]
        mutual_reach = np.maximum(dist, np.maximum(core[:, None], core[None, :]))
        np.fill_diagonal(mutual_reach, 0.0)

        mst_edges = _mst_prim(mutual_reach)
        linkage = _single_linkage(mst_edges, n)
        condensed = _condense_tree(linkage, n, self.min_cluster_size)
        stability = _compute_stability(condensed, n)
        selected = _eom_select(condensed, stability, n, self.allow_single_cluster)

        labels = np.full(n, NOISE, dtype=np.int64)
        if selected:
            label_of = {c: i for i, c in enumerate(sorted(selected))}
            parent_of: dict[int, int] = {}
            point_parent: dict[int, int] = {}
            for parent, child, _, _ in condensed:
                if child >= n:
                    parent_of[child] = parent
                else:
                    point_parent[child] = parent
            if selected == {n}:
                # Root-only selection covers every point.
                labels[:] = label_of[n]
            else:
                for point, cluster in point_parent.items():
                    while cluster is not None and cluster not in selected:
                        cluster = parent_of.get(cluster)
                    if cluster is not None:
                        labels[point] = label_of[cluster]
        self.labels_ = labels
        self.n_clusters_ = len(selected)
        return self

    def fit_predict(self, X, y=None) -> np.ndarray:
        return self.fit(X).labels_


def cluster_hdbscan(points, min_cluster_size: int = 25, min_samples: int = 10,
                    allow_single_cluster: bool = False) -> np.ndarray:
    """Cluster layout coordinates; accepts a Projection2D or an array.

    Returns one label per row, NOISE (-1) for outliers.
    """
    coords = getattr(points, "coords", points)
    model = HDBSCAN(min_cluster_size=min_cluster_size, min_samples=min_samples,
                    allow_single_cluster=allow_single_cluster)
    return model.fit_predict(coords)
