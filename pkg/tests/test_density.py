"""Density clustering: blob recovery, reference parity, degenerate input."""

import json
from pathlib import Path

import numpy as np
import pytest
from sklearn.cluster import HDBSCAN as SkHDBSCAN
from sklearn.metrics import adjusted_rand_score

from sciatlas.density import HDBSCAN, NOISE, ClusterError, cluster_hdbscan
from sciatlas.projection import Projection2D

DATA = Path(__file__).resolve().parent / "data"


def blobs(centers, n_per, std=1.0, seed=0, noise=0):
    rng = np.random.default_rng(seed)
    parts = [rng.normal(c, std, size=(n_per, 2)) for c in centers]
    labels = np.repeat(np.arange(len(centers)), n_per)
    if noise:
        parts.append(rng.uniform(-60, 60, size=(noise, 2)))
        labels = np.concatenate([labels, np.full(noise, -1)])
    X = np.vstack(parts)
    order = rng.permutation(len(X))
    return X[order], labels[order]


def assert_same_partition(a, b):
    """Equal clusterings up to label renaming; noise must match exactly."""
    a, b = np.asarray(a), np.asarray(b)
    assert (a < 0).tolist() == (b < 0).tolist()
    forward, backward = {}, {}
    for x, y in zip(a, b):
        if x < 0:
            continue
        assert forward.setdefault(x, y) == y
        assert backward.setdefault(y, x) == x


class TestRecovery:
    def test_two_blobs_high_ari(self):
        X, truth = blobs([(0, 0), (30, 30)], n_per=100, seed=1)
        labels = cluster_hdbscan(X, min_cluster_size=25, min_samples=10)
        assert adjusted_rand_score(truth, labels) >= 0.95

    def test_frozen_fixture_matches_reference(self):
        points = np.load(DATA / "hdbscan_points.npy")
        expected = json.loads((DATA / "hdbscan_expected.json").read_text())
        labels = cluster_hdbscan(points,
                                 min_cluster_size=expected["min_cluster_size"],
                                 min_samples=expected["min_samples"])
        assert_same_partition(labels, expected["labels"])
        found = len(set(int(l) for l in labels if l >= 0))
        assert found == expected["n_clusters"]

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_sklearn_on_random_data(self, seed):
        rng = np.random.default_rng(seed)
        n_centers = rng.integers(2, 5)
        centers = rng.uniform(-50, 50, size=(n_centers, 2))
        X, _ = blobs(centers, n_per=int(rng.integers(30, 60)),
                     std=1.5, seed=seed, noise=10)
        mine = cluster_hdbscan(X, min_cluster_size=20, min_samples=8)
        ref = SkHDBSCAN(min_cluster_size=20, min_samples=8).fit(X).labels_
        assert_same_partition(mine, ref)

    def test_permutation_invariance(self):
        X, _ = blobs([(0, 0), (25, 0), (0, 25)], n_per=40, seed=3, noise=8)
        base = cluster_hdbscan(X, min_cluster_size=15, min_samples=6)
        rng = np.random.default_rng(9)
        perm = rng.permutation(len(X))
        shuffled = cluster_hdbscan(X[perm], min_cluster_size=15, min_samples=6)
        assert_same_partition(shuffled, base[perm])


class TestDegenerate:
    def test_identical_points_form_one_cluster(self):
        X = np.ones((30, 2))
        labels = cluster_hdbscan(X, min_cluster_size=5, min_samples=3)
        assert set(labels.tolist()) == {0}

    def test_too_few_points(self):
        with pytest.raises(ClusterError):
            cluster_hdbscan(np.zeros((4, 2)), min_cluster_size=5)

    def test_parameter_validation(self):
        X = np.zeros((30, 2))
        with pytest.raises(ClusterError):
            cluster_hdbscan(X, min_cluster_size=1)
        with pytest.raises(ClusterError):
            cluster_hdbscan(X, min_cluster_size=5, min_samples=0)

    def test_uniform_noise_mostly_unclustered(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(0, 100, size=(80, 2))
        labels = cluster_hdbscan(X, min_cluster_size=25, min_samples=10,
                                 allow_single_cluster=False)
        ref = SkHDBSCAN(min_cluster_size=25, min_samples=10).fit(X).labels_
        assert_same_partition(labels, ref)


class TestEstimatorSurface:
    def test_fit_exposes_labels(self):
        X, _ = blobs([(0, 0), (30, 0)], n_per=30, seed=2)
        est = HDBSCAN(min_cluster_size=15, min_samples=5)
        est.fit(X)
        assert est.labels_.shape == (60,)
        assert est.n_clusters_ == 2

    def test_get_params_round_trip(self):
        est = HDBSCAN(min_cluster_size=7, min_samples=3,
                      allow_single_cluster=True)
        params = est.get_params()
        assert HDBSCAN(**params).get_params() == params

    def test_accepts_projection_object(self):
        X, _ = blobs([(0, 0), (30, 0)], n_per=30, seed=2)
        proj = Projection2D(ids=[f"p{i}" for i in range(len(X))],
                            coords=X, params={})
        direct = cluster_hdbscan(X, min_cluster_size=15, min_samples=5)
        via_proj = cluster_hdbscan(proj, min_cluster_size=15, min_samples=5)
        assert np.array_equal(direct, via_proj)

    def test_noise_constant(self):
        assert NOISE == -1
