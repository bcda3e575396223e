"""2D layout: structure preservation, determinism, degenerate inputs."""

import numpy as np
import pytest

from sciatlas.embedding import AspectVectors, EmbeddingTable, HashingProvider
from sciatlas.projection import LargeVisLayout, Projection2D, ProjectionError, project_2d


def two_blob_data(n=40, dim=16, gap=6.0, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 0.3, size=(n, dim))
    b = rng.normal(0.0, 0.3, size=(n, dim))
    b[:, 0] += gap
    return np.vstack([a, b]).astype(np.float64)


class TestLayout:
    def test_blobs_stay_separated(self):
        X = two_blob_data()
        coords = LargeVisLayout(n_neighbors=8, n_epochs=120,
                                random_state=0).fit_transform(X)
        a, b = coords[:40], coords[40:]
        within = max(np.linalg.norm(a - a.mean(0), axis=1).mean(),
                     np.linalg.norm(b - b.mean(0), axis=1).mean())
        between = float(np.linalg.norm(a.mean(0) - b.mean(0)))
        assert between > 3.0 * within

    def test_deterministic_given_seed(self):
        X = two_blob_data(n=25)
        a = LargeVisLayout(random_state=3, n_epochs=50).fit_transform(X)
        b = LargeVisLayout(random_state=3, n_epochs=50).fit_transform(X)
        assert np.array_equal(a, b)
        c = LargeVisLayout(random_state=4, n_epochs=50).fit_transform(X)
        assert not np.array_equal(a, c)

    def test_objective_decreases(self):
        X = two_blob_data(n=30)
        layout = LargeVisLayout(n_epochs=150, random_state=0)
        layout.fit(X)
        assert layout.objective_final_ < layout.objective_initial_

    def test_identical_points_collapse_when_fully_connected(self):
        # with every point a neighbor of every other there are no
        # repulsion candidates, so coincident inputs must stay coincident
        X = np.ones((20, 8), dtype=np.float64)
        coords = LargeVisLayout(n_neighbors=19, n_epochs=80,
                                random_state=0).fit_transform(X)
        assert np.ptp(coords, axis=0).max() == 0.0

    def test_identical_points_stay_finite(self):
        X = np.ones((20, 8), dtype=np.float64)
        coords = LargeVisLayout(n_neighbors=5, n_epochs=40,
                                random_state=0).fit_transform(X)
        assert np.isfinite(coords).all()

    def test_estimator_params_round_trip(self):
        layout = LargeVisLayout(n_neighbors=7, gamma=3.0)
        params = layout.get_params()
        assert params["n_neighbors"] == 7 and params["gamma"] == 3.0
        clone = LargeVisLayout(**params)
        assert clone.get_params() == params

    def test_too_few_points(self):
        with pytest.raises(ProjectionError):
            LargeVisLayout(n_neighbors=5).fit_transform(np.zeros((2, 4)))


class TestProject2D:
    def make_table(self, n=30):
        provider = HashingProvider(dim=32)
        ids = [f"pub-{i:05d}" for i in range(n)]
        bodies = [f"problem area {i % 3} topic {i % 3}" for i in range(n)]
        matrix = provider.embed_batch("problem", bodies)
        vectors = AspectVectors(ids=ids, matrix=matrix,
                                instruction_id="problem",
                                provider_id=provider.provider_id)
        return vectors

    def test_projection_carries_ids_and_params(self):
        vectors = self.make_table()
        proj = project_2d(vectors, params={"n_neighbors": 6, "n_epochs": 40},
                          seed=1)
        assert proj.ids == vectors.ids
        assert proj.coords.shape == (30, 2)
        assert proj.params["n_neighbors"] == 6
        assert proj.objective_final_ is not None

    def test_side_resolves_table_attribute(self):
        vectors = self.make_table()
        table = EmbeddingTable(problem=vectors, method=vectors, usage=vectors)
        proj = project_2d(table, params={"n_neighbors": 6, "n_epochs": 30},
                          seed=0, side="problem")
        assert proj.ids == vectors.ids

    def test_save_load_round_trip(self, tmp_path):
        proj = project_2d(self.make_table(), params={"n_neighbors": 6,
                                                     "n_epochs": 30}, seed=0)
        path = tmp_path / "proj.tsv"
        proj.save(path)
        again = Projection2D.load(path)
        assert again.ids == proj.ids
        assert np.array_equal(again.coords, proj.coords)

    def test_bounding_box_diagonal(self):
        proj = Projection2D(ids=["a", "b"], coords=np.array([[0.0, 0.0],
                                                             [3.0, 4.0]]),
                            params={})
        assert proj.bounding_box_diagonal() == pytest.approx(5.0)
