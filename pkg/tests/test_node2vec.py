"""Biased random walks and the skip-gram embedder."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sciatlas.node2vec import Node2Vec, Node2VecError, generate_walks

CYCLE = [(0, 1), (1, 2), (2, 3), (3, 0)]
PATH = [(0, 1), (1, 2)]


def two_bicliques():
    """Two disconnected complete bipartite blocks of 5 + 5 nodes each."""
    edges = []
    for a in range(5):
        for b in range(5, 10):
            edges.append((a, b))
    for a in range(10, 15):
        for b in range(15, 20):
            edges.append((a, b))
    return edges


class TestWalks:
    def test_walks_follow_edges(self):
        rng = np.random.default_rng(0)
        walks = generate_walks(CYCLE, 4, walks_per_node=5, walk_length=10,
                               rng=rng)
        assert len(walks) == 20
        adjacent = {frozenset(e) for e in CYCLE}
        for walk in walks:
            assert len(walk) == 10
            for a, b in zip(walk, walk[1:]):
                assert frozenset((a, b)) in adjacent

    def test_unbiased_transitions_are_uniform(self):
        # on a cycle with p = q = 1 each direction is a fair coin
        rng = np.random.default_rng(1)
        walks = generate_walks(CYCLE, 4, walks_per_node=50, walk_length=20,
                               rng=rng)
        forward = total = 0
        for walk in walks:
            for a, b in zip(walk, walk[1:]):
                total += 1
                forward += b == (a + 1) % 4
        assert 0.45 < forward / total < 0.55

    def test_low_q_explores_outward(self):
        rng = np.random.default_rng(2)
        walks = generate_walks(PATH, 3, walks_per_node=200, walk_length=3,
                               p=10.0, q=0.1, rng=rng)
        from_end = [w for w in walks if w[0] == 0]
        assert len(from_end) == 200
        onward = sum(w[2] == 2 for w in from_end)
        assert onward / len(from_end) > 0.9

    def test_low_p_backtracks(self):
        rng = np.random.default_rng(3)
        walks = generate_walks(PATH, 3, walks_per_node=200, walk_length=3,
                               p=0.1, q=10.0, rng=rng)
        from_end = [w for w in walks if w[0] == 0]
        returned = sum(w[2] == 0 for w in from_end)
        assert returned / len(from_end) > 0.9

    def test_edge_weights_bias_first_step(self):
        star = [(0, 1), (0, 2)]
        rng = np.random.default_rng(4)
        walks = generate_walks(star, 3, walks_per_node=300, walk_length=2,
                               weights=[100.0, 1.0], rng=rng)
        from_hub = [w for w in walks if w[0] == 0]
        heavy = sum(w[1] == 1 for w in from_hub)
        assert heavy / len(from_hub) > 0.9

    def test_isolated_node_produces_no_walks(self):
        rng = np.random.default_rng(5)
        walks = generate_walks([(0, 1)], 3, walks_per_node=4, walk_length=5,
                               rng=rng)
        assert all(w[0] != 2 for w in walks)
        assert len(walks) == 8

    @pytest.mark.parametrize("kwargs", [
        {"walk_length": 1},
        {"walks_per_node": 0},
        {"p": 0.0},
        {"q": -1.0},
    ])
    def test_invalid_walk_parameters(self, kwargs):
        with pytest.raises(Node2VecError):
            generate_walks(CYCLE, 4, **kwargs)


class TestEmbedding:
    def test_components_separate(self):
        model = Node2Vec(dim=32, walks_per_node=10, walk_length=20,
                         window=5, epochs=2, random_state=0)
        vectors = model.fit_transform(two_bicliques(), n_nodes=20)
        assert vectors.shape == (20, 32)
        unit = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
        sims = unit @ unit.T
        same = [sims[i, j] for i in range(20) for j in range(20)
                if i != j and (i < 10) == (j < 10)]
        other = [sims[i, j] for i in range(20) for j in range(20)
                 if (i < 10) != (j < 10)]
        assert np.mean(same) > np.mean(other) + 0.5
        assert np.all(np.isfinite(vectors))

    def test_seed_controls_result(self):
        edges = two_bicliques()
        a = Node2Vec(dim=16, walk_length=10, epochs=1,
                     random_state=7).fit_transform(edges)
        b = Node2Vec(dim=16, walk_length=10, epochs=1,
                     random_state=7).fit_transform(edges)
        c = Node2Vec(dim=16, walk_length=10, epochs=1,
                     random_state=8).fit_transform(edges)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_isolated_nodes_reported_and_untrained(self):
        model = Node2Vec(dim=16, walk_length=10, epochs=1, random_state=0)
        model.fit([(0, 1), (1, 2)], n_nodes=5)
        assert model.isolated_ == [3, 4]
        # untrained rows keep the small random init
        norms = np.linalg.norm(model.embeddings_, axis=1)
        assert norms[3] < 0.2 and norms[4] < 0.2

    def test_transform_selects_rows(self):
        model = Node2Vec(dim=8, walk_length=10, epochs=1, random_state=0)
        model.fit(CYCLE)
        picked = model.transform([2, 0])
        assert np.array_equal(picked[0], model.embeddings_[2])
        assert np.array_equal(picked[1], model.embeddings_[0])

    def test_transform_before_fit(self):
        with pytest.raises(NotFittedError):
            Node2Vec().transform([0])

    def test_infers_node_count_from_edges(self):
        model = Node2Vec(dim=8, walk_length=10, epochs=1, random_state=0)
        model.fit([(0, 4)])
        assert model.n_nodes_ == 5
        assert model.embeddings_.shape == (5, 8)

    def test_rejects_empty_graph(self):
        with pytest.raises(Node2VecError, match="no nodes"):
            Node2Vec().fit([])

    def test_rejects_bad_dimensions(self):
        with pytest.raises(Node2VecError):
            Node2Vec(dim=0).fit(CYCLE)

    def test_estimator_interface(self):
        model = Node2Vec(dim=12, p=2.0, q=0.5)
        params = model.get_params()
        assert params["dim"] == 12 and params["q"] == 0.5
        twin = clone(model)
        assert twin.get_params() == params
        model.set_params(window=3)
        assert model.get_params()["window"] == 3
