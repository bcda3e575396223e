"""Node embeddings from biased random walks.

Second-order walks (return parameter p, in-out parameter q) feed a
skip-gram model trained with negative sampling. All randomness comes
from one seeded generator; updates run in vectorized batches against a
per-batch snapshot, so training is bit-wise reproducible.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .projection import _alias_draw, _alias_setup


class Node2VecError(Exception):
    """Invalid graph or training parameters."""


def _build_adjacency(edges, n_nodes: int, weights=None):
    """Sorted neighbor/weight arrays per node from an undirected edge list."""
    neighbor_lists: list[list] = [[] for _ in range(n_nodes)]
    if weights is None:
        weights = [1.0] * len(edges)
    for (u, v), w in zip(edges, weights):
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise Node2VecError(f"edge ({u}, {v}) outside node range")
        if u == v:
            raise Node2VecError(f"self-loop on node {u}")
        neighbor_lists[u].append((v, float(w)))
        neighbor_lists[v].append((u, float(w)))
    neighbors = []
    neighbor_weights = []
    for entries in neighbor_lists:
        entries.sort()
        neighbors.append(np.array([v for v, _ in entries], dtype=np.int64))
        neighbor_weights.append(np.array([w for _, w in entries], dtype=np.float64))
    return neighbors, neighbor_weights


def generate_walks(
    edges,
    n_nodes: int,
    walks_per_node: int = 10,
    walk_length: int = 80,
    p: float = 1.0,
    q: float = 1.0,
    weights=None,
    rng: np.random.Generator | None = None,
) -> list[list[int]]:
    """Second-order biased walks; nodes without edges produce no walks.

    Step weights from t (previous) standing at v toward x:
    w(v,x)/p when x == t, w(v,x) when x neighbors t, w(v,x)/q otherwise.
    """
    if walk_length < 2 or walks_per_node < 1:
        raise Node2VecError("walk_length must be >= 2 and walks_per_node >= 1")
    if p <= 0 or q <= 0:
        raise Node2VecError("p and q must be positive")
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(0))
    neighbors, neighbor_weights = _build_adjacency(edges, n_nodes, weights)
    neighbor_sets = [set(arr.tolist()) for arr in neighbors]

    first_order = {}
    for v in range(n_nodes):
        if len(neighbors[v]):
            first_order[v] = _alias_setup(neighbor_weights[v])

    second_order: dict[tuple, tuple] = {}

    def edge_table(t: int, v: int):
        key = (t, v)
        table = second_order.get(key)
        if table is None:
            nbr = neighbors[v]
            w = neighbor_weights[v].copy()
            t_set = neighbor_sets[t]
            for i, x in enumerate(nbr):
                if x == t:
                    w[i] /= p
                elif int(x) not in t_set:
                    w[i] /= q
            table = _alias_setup(w)
            second_order[key] = table
        return table

    walks = []
    for _ in range(walks_per_node):
        for start in range(n_nodes):
            if start not in first_order:
                continue
            walk = [start]
            accept, alias = first_order[start]
            pick = int(_alias_draw(rng, accept, alias, ()))
            walk.append(int(neighbors[start][pick]))
            while len(walk) < walk_length:
                prev, cur = walk[-2], walk[-1]
                accept, alias = edge_table(prev, cur)
                pick = int(_alias_draw(rng, accept, alias, ()))
                walk.append(int(neighbors[cur][pick]))
            walks.append(walk)
    return walks


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -35.0, 35.0)))


class Node2Vec(BaseEstimator):
    """Skip-gram-with-negative-sampling over biased random walks.

    Parameters follow the customary conventions: dim 128, 10 walks of
    length 80 per node, window 10, 5 negatives, p = q = 1, 5 epochs.
    Nodes with no edges are never visited; their rows stay at the random
    initialization and are listed in `isolated_`.

    Updates inside a batch read from a per-batch snapshot. Keep batches
    small relative to the pair count per node: a node hit many times in
    one batch accumulates that many same-snapshot steps, which overshoots
    and can blow the weights up.
    """

    def __init__(
        self,
        dim: int = 128,
        walks_per_node: int = 10,
        walk_length: int = 80,
        window: int = 10,
        n_negative: int = 5,
        p: float = 1.0,
        q: float = 1.0,
        epochs: int = 5,
        learning_rate: float = 0.025,
        batch_size: int = 256,
        random_state: int = 0,
    ):
        self.dim = dim
        self.walks_per_node = walks_per_node
        self.walk_length = walk_length
        self.window = window
        self.n_negative = n_negative
        self.p = p
        self.q = q
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, edges, n_nodes: int | None = None, weights=None):
        if self.dim < 1 or self.window < 1 or self.epochs < 1:
            raise Node2VecError("dim, window, and epochs must be positive")
        edges = [(int(u), int(v)) for u, v in edges]
        if n_nodes is None:
            n_nodes = max((max(u, v) for u, v in edges), default=-1) + 1
        if n_nodes < 1:
            raise Node2VecError("graph has no nodes")
        rng = np.random.Generator(np.random.PCG64(self.random_state))

        walks = generate_walks(
            edges, n_nodes, walks_per_node=self.walks_per_node,
            walk_length=self.walk_length, p=self.p, q=self.q,
            weights=weights, rng=rng)

        visited = np.zeros(n_nodes, dtype=bool)
        centers = []
        contexts = []
        for walk in walks:
            arr = walk
            visited[arr] = True
            for i, center in enumerate(arr):
                lo = max(0, i - self.window)
                hi = min(len(arr), i + self.window + 1)
                for j in range(lo, hi):
                    if j != i:
                        centers.append(center)
                        contexts.append(arr[j])
        self.isolated_ = sorted(int(v) for v in np.nonzero(~visited)[0])

        w_in = (rng.random((n_nodes, self.dim)) - 0.5) / self.dim
        w_out = np.zeros((n_nodes, self.dim), dtype=np.float64)

        if centers:
            centers = np.asarray(centers, dtype=np.int64)
            contexts = np.asarray(contexts, dtype=np.int64)
            counts = np.bincount(contexts, minlength=n_nodes).astype(np.float64)
            noise = counts**0.75
            noise_accept, noise_alias = _alias_setup(noise)

            n_pairs = len(centers)
            total = self.epochs * n_pairs
            processed = 0
            for _ in range(self.epochs):
                order = rng.permutation(n_pairs)
                for lo in range(0, n_pairs, self.batch_size):
                    batch = order[lo:lo + self.batch_size]
                    lr = self.learning_rate * max(1.0 - processed / total, 1e-4)
                    c = centers[batch]
                    o = contexts[batch]
                    negs = _alias_draw(rng, noise_accept, noise_alias,
                                       (len(batch), self.n_negative))

                    # Fancy indexing copies, so every read below is a
                    # snapshot; scatters come after all gathers.
                    vc = w_in[c]
                    vo = w_out[o]
                    vn = w_out[negs]

                    g_pos = _sigmoid(np.einsum("ij,ij->i", vc, vo)) - 1.0
                    g_neg = _sigmoid(np.einsum("ij,ikj->ik", vc, vn))

                    grad_c = (g_pos[:, None] * vo
                              + np.einsum("ik,ikj->ij", g_neg, vn))
                    np.add.at(w_in, c, -lr * grad_c)
                    np.add.at(w_out, o, -lr * g_pos[:, None] * vc)
                    np.add.at(w_out, negs.ravel(),
                              (-lr * g_neg[:, :, None] * vc[:, None, :])
                              .reshape(-1, self.dim))
                    processed += len(batch)

        self.embeddings_ = w_in
        self.n_nodes_ = n_nodes
        return self

    def fit_transform(self, edges, n_nodes: int | None = None, weights=None) -> np.ndarray:
        return self.fit(edges, n_nodes=n_nodes, weights=weights).embeddings_

    def transform(self, node_ids) -> np.ndarray:
        check_is_fitted(self, "embeddings_")
        return self.embeddings_[np.asarray(node_ids, dtype=np.int64)]
