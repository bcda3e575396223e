"""2D layout of high-dimensional aspect vectors.

LargeVis-style pipeline: build a (possibly approximate) kNN graph,
convert distances to symmetrized edge weights through per-point
bandwidth calibration, then run edge-sampling SGD where sampled edges
attract their endpoints and noise-distribution negatives repel them.

Everything random flows from one seeded generator and all updates are
applied through vectorized batch scatters, so coordinates are bit-wise
reproducible for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array

from ._util import atomic_write_text

GRADIENT_CLIP = 5.0
REPULSION_STABILIZER = 0.1
OBJECTIVE_MAX_POINTS = 2000


class ProjectionError(Exception):
    """Layout preconditions violated (too few points, bad vectors)."""


def _alias_setup(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Walker alias tables for O(1) draws from a discrete distribution."""
    n = len(probs)
    scaled = probs * n / probs.sum()
    accept = np.zeros(n, dtype=np.float64)
    alias = np.zeros(n, dtype=np.int64)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        l = large.pop()
        accept[s] = scaled[s]
        alias[s] = l
        scaled[l] = scaled[l] - (1.0 - scaled[s])
        if scaled[l] < 1.0:
            small.append(l)
        else:
            large.append(l)
    for i in large:
        accept[i] = 1.0
    for i in small:
        accept[i] = 1.0
    return accept, alias


def _alias_draw(rng: np.random.Generator, accept: np.ndarray, alias: np.ndarray,
                size) -> np.ndarray:
    idx = rng.integers(0, len(accept), size=size)
    keep = rng.random(size=size) < accept[idx]
    return np.where(keep, idx, alias[idx])


def _exact_knn(X: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and squared distances of the k nearest neighbors per row."""
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(d2, np.inf)
    np.maximum(d2, 0.0, out=d2)
    idx = np.argpartition(d2, kth=k - 1, axis=1)[:, :k]
    rows = np.arange(len(X))[:, None]
    dist = d2[rows, idx]
    order = np.argsort(dist, axis=1, kind="stable")
    return idx[rows, order], dist[rows, order]


def _rp_tree_leaves(X: np.ndarray, indices: np.ndarray, leaf_size: int,
                    rng: np.random.Generator, out: list) -> None:
    if len(indices) <= leaf_size:
        out.append(indices)
        return
    a, b = rng.choice(len(indices), size=2, replace=False)
    normal = X[indices[a]] - X[indices[b]]
    norm = np.linalg.norm(normal)
    if norm == 0.0:
        # Coincident pivots: split arbitrarily but deterministically.
        half = len(indices) // 2
        perm = rng.permutation(len(indices))
        _rp_tree_leaves(X, indices[perm[:half]], leaf_size, rng, out)
        _rp_tree_leaves(X, indices[perm[half:]], leaf_size, rng, out)
        return
    proj = X[indices] @ normal
    threshold = np.median(proj)
    left = proj <= threshold
    # Median split can degenerate when many projections tie.
    if left.all() or not left.any():
        half = len(indices) // 2
        order = np.argsort(proj, kind="stable")
        _rp_tree_leaves(X, indices[order[:half]], leaf_size, rng, out)
        _rp_tree_leaves(X, indices[order[half:]], leaf_size, rng, out)
        return
    _rp_tree_leaves(X, indices[left], leaf_size, rng, out)
    _rp_tree_leaves(X, indices[~left], leaf_size, rng, out)


def _approx_knn(X: np.ndarray, k: int, rng: np.random.Generator,
                n_trees: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Randomized-projection-tree kNN with one neighbor-expansion pass."""
    n = len(X)
    leaf_size = max(32, 2 * k)
    candidates: list[set] = [set() for _ in range(n)]
    for _ in range(n_trees):
        leaves: list[np.ndarray] = []
        _rp_tree_leaves(X, np.arange(n), leaf_size, rng, leaves)
        for leaf in leaves:
            members = set(leaf.tolist())
            for i in leaf:
                candidates[i].update(members)

    def best_k(cand_sets: list[set]) -> tuple[np.ndarray, np.ndarray]:
        idx_out = np.empty((n, k), dtype=np.int64)
        d2_out = np.empty((n, k), dtype=np.float64)
        for i in range(n):
            cand = np.fromiter((c for c in cand_sets[i] if c != i), dtype=np.int64)
            diff = X[cand] - X[i]
            d2 = np.einsum("ij,ij->i", diff, diff)
            top = np.argsort(d2, kind="stable")[:k]
            idx_out[i] = cand[top]
            d2_out[i] = d2[top]
        return idx_out, d2_out

    idx, _ = best_k(candidates)
    expanded: list[set] = [set(row.tolist()) for row in idx]
    for i in range(n):
        for j in idx[i]:
            expanded[i].update(idx[j].tolist())
            expanded[j].add(i)
    return best_k(expanded)


def _calibrate_weights(knn_idx: np.ndarray, knn_d2: np.ndarray,
                       perplexity: float) -> sparse.csr_matrix:
    """Per-point bandwidths so each conditional distribution has the
    target entropy; returns the directed conditional-probability matrix."""
    n, k = knn_idx.shape
    target = np.log(perplexity)
    probs = np.empty_like(knn_d2)
    for i in range(n):
        d2 = knn_d2[i] - knn_d2[i].min()
        if d2.max() == 0.0:
            probs[i] = 1.0 / k
            continue
        lo, hi = 0.0, np.inf
        beta = 1.0
        for _ in range(64):
            w = np.exp(-beta * d2)
            total = w.sum()
            h = np.log(total) + beta * float(np.dot(w, d2)) / total
            if abs(h - target) < 1e-7:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
        w = np.exp(-beta * d2)
        probs[i] = w / w.sum()
    rows = np.repeat(np.arange(n), k)
    return sparse.csr_matrix((probs.ravel(), (rows, knn_idx.ravel())), shape=(n, n))


class LargeVisLayout(BaseEstimator):
    """Non-parametric 2D layout estimator (fit_transform only).

    Parameters
    ----------
    n_neighbors : size of the kNN graph.
    n_epochs : passes over the directed edge list; each pass draws
        len(edges) weighted edge samples.
    n_negative_samples : repulsive samples per attractive sample, drawn
        from a degree^0.75 noise distribution restricted to non-neighbors
        of the anchor.
    learning_rate : initial SGD step, decayed linearly to zero. Paired
        attractive updates contract only for rates <= (1 + d^2) / 2, so
        the default stays at 0.5; larger values leave coincident points
        scattered.
    gamma : repulsion weight.
    perplexity : bandwidth target; defaults to max(1, n_neighbors / 3).
    batch_size : sampled edges applied per coordinate snapshot. Small
        batches track sequential SGD closely; large ones smear many
        same-snapshot updates together and wash out structure.
    exact_knn_threshold : above this many points the kNN graph is
        approximated with randomized projection trees.
    """

    def __init__(
        self,
        n_components: int = 2,
        n_neighbors: int = 15,
        n_epochs: int = 200,
        n_negative_samples: int = 5,
        learning_rate: float = 0.5,
        gamma: float = 7.0,
        perplexity: float | None = None,
        batch_size: int = 32,
        exact_knn_threshold: int = 5000,
        random_state: int = 0,
    ):
        self.n_components = n_components
        self.n_neighbors = n_neighbors
        self.n_epochs = n_epochs
        self.n_negative_samples = n_negative_samples
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.perplexity = perplexity
        self.batch_size = batch_size
        self.exact_knn_threshold = exact_knn_threshold
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        n = len(X)
        if n < self.n_neighbors + 1:
            raise ProjectionError(
                f"need at least n_neighbors + 1 = {self.n_neighbors + 1} "
                f"points, got {n}")
        rng = np.random.Generator(np.random.PCG64(self.random_state))

        if n <= self.exact_knn_threshold:
            knn_idx, knn_d2 = _exact_knn(X, self.n_neighbors)
        else:
            knn_idx, knn_d2 = _approx_knn(X, self.n_neighbors, rng)

        perplexity = self.perplexity
        if perplexity is None:
            perplexity = max(1.0, self.n_neighbors / 3.0)
        cond = _calibrate_weights(knn_idx, knn_d2, perplexity)
        weights = (cond + cond.T).tocoo()

        edge_src = weights.row.astype(np.int64)
        edge_dst = weights.col.astype(np.int64)
        edge_w = weights.data.astype(np.float64)
        csr = weights.tocsr()
        # Dense adjacency vectorizes the negative-sample rejection test;
        # fall back to per-node sets when the matrix would be too large.
        adjacency = None
        neighbor_sets = None
        if n <= 4096:
            adjacency = np.zeros((n, n), dtype=bool)
            adjacency[edge_src, edge_dst] = True
            np.fill_diagonal(adjacency, True)
        else:
            neighbor_sets = [
                set(csr.indices[csr.indptr[i]:csr.indptr[i + 1]].tolist()) | {i}
                for i in range(n)
            ]

        degree = np.asarray(csr.sum(axis=1)).ravel()
        noise = degree**0.75
        noise_accept, noise_alias = _alias_setup(noise)
        edge_accept, edge_alias = _alias_setup(edge_w)

        coords = rng.normal(scale=1e-2, size=(n, self.n_components))

        edge_mask = None
        track_objective = n <= OBJECTIVE_MAX_POINTS
        if track_objective:
            edge_mask = np.zeros((n, n), dtype=bool)
            edge_mask[edge_src, edge_dst] = True
            self.objective_initial_ = self._objective(coords, edge_src, edge_dst,
                                                      edge_w, edge_mask)
        else:
            self.objective_initial_ = None

        total_samples = self.n_epochs * len(edge_src)
        processed = 0
        m_neg = self.n_negative_samples
        while processed < total_samples:
            batch = min(self.batch_size, total_samples - processed)
            lr = self.learning_rate * max(1.0 - processed / total_samples, 1e-4)
            picks = _alias_draw(rng, edge_accept, edge_alias, batch)
            anchors = edge_src[picks]
            targets = edge_dst[picks]

            snapshot = coords.copy()
            delta = np.zeros_like(coords)

            diff = snapshot[anchors] - snapshot[targets]
            s = np.einsum("ij,ij->i", diff, diff)
            grad = np.clip(2.0 * diff / (1.0 + s)[:, None],
                           -GRADIENT_CLIP, GRADIENT_CLIP)
            np.add.at(delta, anchors, -lr * grad)
            np.add.at(delta, targets, lr * grad)

            if m_neg > 0:
                negs = _alias_draw(rng, noise_accept, noise_alias, (batch, m_neg))

                def invalid_mask(drawn: np.ndarray) -> np.ndarray:
                    if adjacency is not None:
                        return adjacency[anchors[:, None], drawn]
                    flat = np.fromiter(
                        (int(k) in neighbor_sets[int(a)]
                         for a, k in zip(np.repeat(anchors, m_neg), drawn.ravel())),
                        dtype=bool, count=drawn.size)
                    return flat.reshape(drawn.shape)

                invalid = invalid_mask(negs)
                for _ in range(2):
                    if not invalid.any():
                        break
                    redraw = _alias_draw(rng, noise_accept, noise_alias,
                                         (batch, m_neg))
                    negs = np.where(invalid, redraw, negs)
                    invalid = invalid_mask(negs)
                valid = ~invalid
                flat_anchor = np.repeat(anchors, m_neg)
                flat_neg = negs.ravel()
                flat_valid = valid.ravel()
                diff_n = snapshot[flat_anchor] - snapshot[flat_neg]
                s_n = np.einsum("ij,ij->i", diff_n, diff_n)
                grad_n = np.clip(
                    2.0 * self.gamma * diff_n
                    / ((REPULSION_STABILIZER + s_n) * (1.0 + s_n))[:, None],
                    -GRADIENT_CLIP, GRADIENT_CLIP)
                grad_n[~flat_valid] = 0.0
                np.add.at(delta, flat_anchor, lr * grad_n)
                np.add.at(delta, flat_neg, -lr * grad_n)

            coords += delta
            processed += batch

        if track_objective:
            self.objective_final_ = self._objective(coords, edge_src, edge_dst,
                                                    edge_w, edge_mask)
        else:
            self.objective_final_ = None
        self.embedding_ = coords
        self.n_features_in_ = X.shape[1]
        return self

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X).embedding_

    def _objective(self, coords, edge_src, edge_dst, edge_w, edge_mask) -> float:
        """Negative log-likelihood over all pairs (exact, small n only)."""
        diff = coords[:, None, :] - coords[None, :, :]
        s = np.einsum("ijk,ijk->ij", diff, diff)
        attract = float(np.dot(edge_w, np.log1p(s[edge_src, edge_dst])))
        off = ~edge_mask
        np.fill_diagonal(off, False)
        s_off = np.maximum(s[off], 1e-12)
        repel = -self.gamma * float(np.sum(np.log(s_off) - np.log1p(s_off)))
        return attract + repel


PROJECTION_PARAM_KEYS = ("n_neighbors", "n_negative_samples", "learning_rate",
                         "n_epochs", "seed")


@dataclass
class Projection2D:
    """Layout result: row i of `coords` belongs to `ids[i]`."""

    ids: list[str]
    coords: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[0] != len(self.ids):
            raise ProjectionError("coordinate matrix does not match id list")
        if not np.all(np.isfinite(self.coords)):
            raise ProjectionError("non-finite coordinates in projection")

    def __len__(self) -> int:
        return len(self.ids)

    def bounding_box_diagonal(self) -> float:
        if len(self.coords) == 0:
            return 0.0
        span = self.coords.max(axis=0) - self.coords.min(axis=0)
        return float(np.sqrt(np.sum(span**2)))

    def save(self, path: str | Path) -> None:
        lines = ["pub_id\t" + "\t".join(f"c{i}" for i in range(self.coords.shape[1]))]
        for pub_id, row in zip(self.ids, self.coords):
            lines.append(pub_id + "\t" + "\t".join(repr(float(v)) for v in row))
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path, params: dict | None = None) -> "Projection2D":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        ids = []
        rows = []
        for line in lines[1:]:
            parts = line.split("\t")
            ids.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
        coords = np.asarray(rows, dtype=np.float64) if rows else np.empty((0, 2))
        return cls(ids=ids, coords=coords, params=params or {})


def project_2d(table, params: dict | None = None, seed: int = 0,
               side: str | None = None) -> Projection2D:
    """Lay out one aspect-vector collection in 2D.

    `table` is either an AspectVectors or an EmbeddingTable plus `side`
    naming which collection to project.
    """
    vectors = table
    if side is not None:
        vectors = getattr(table, side)
    params = dict(params or {})
    layout = LargeVisLayout(random_state=seed, **params)
    coords = layout.fit_transform(vectors.matrix)
    recorded = {
        "n_neighbors": layout.n_neighbors,
        "n_negative_samples": layout.n_negative_samples,
        "learning_rate": layout.learning_rate,
        "n_epochs": layout.n_epochs,
        "seed": seed,
    }
    proj = Projection2D(ids=list(vectors.ids), coords=coords, params=recorded)
    proj.objective_initial_ = layout.objective_initial_
    proj.objective_final_ = layout.objective_final_
    return proj
