"""Cluster models: tf-idf terms, labels, adjacency merging, persistence."""

import json
from pathlib import Path

import numpy as np
import pytest

from sciatlas.clusters import (
    ClusterModel,
    ClusterModelError,
    build_cluster_model,
    load_cluster_model,
    merge_adjacent_same_label,
    recompute_top_terms,
    save_cluster_model,
    top_terms_tfidf,
)
from sciatlas.embedding import AspectVectors, HashingProvider, embed_aspects
from sciatlas.extraction import ExtractionSet, MockGenClient
from sciatlas.projection import Projection2D

from conftest import make_ext

DATA = Path(__file__).resolve().parent / "data"


class TestTopTerms:
    def test_matches_spreadsheet_oracle(self):
        fixture = json.loads((DATA / "tfidf_expected.json").read_text())
        got = top_terms_tfidf(fixture["docs"], k=fixture["k"])
        assert got == fixture["top_terms"]

    def test_common_term_scores_zero(self):
        # a term in every document has idf ln(1) = 0
        docs = ["shared alpha", "shared beta", "shared gamma"]
        terms = top_terms_tfidf(docs, k=2)
        for unique, per_doc in zip(["alpha", "beta", "gamma"], terms):
            assert per_doc[0] == unique

    def test_tie_breaks_lexicographic(self):
        docs = ["zebra apple", "other thing"]
        assert top_terms_tfidf(docs, k=2)[0] == ["apple", "zebra"]

    def test_empty_rejected(self):
        with pytest.raises(ClusterModelError):
            top_terms_tfidf([])


def small_side(n_families=3, per_family=6):
    """Extractions, vectors, projection, labels for one problem side."""
    exts = []
    i = 0
    for f in range(n_families):
        for _ in range(per_family):
            i += 1
            exts.append(make_ext(i, problem=f"problem family {f} topic",
                                 method="method"))
    ext_set = ExtractionSet(exts)
    table = embed_aspects(ext_set, HashingProvider(dim=32))
    vectors = table.problem
    coords = np.zeros((len(vectors.ids), 2))
    labels = np.zeros(len(vectors.ids), dtype=np.int64)
    for row, pub_id in enumerate(vectors.ids):
        f = (int(pub_id.split("-")[1]) - 1) // per_family
        labels[row] = f
        coords[row] = (10.0 * f, 0.0)
    proj = Projection2D(ids=list(vectors.ids), coords=coords, params={})
    return ext_set, vectors, proj, labels


class TestBuildModel:
    def test_assembles_all_parts(self):
        exts, vectors, proj, labels = small_side()
        model = build_cluster_model("problem", exts, vectors, proj, labels,
                                    MockGenClient(), top_k=5, n_samples=3)
        assert model.side == "problem"
        assert model.n_clusters() == 3
        assert sorted(model.labels) == [0, 1, 2]
        assert all(isinstance(l, str) and l for l in model.labels.values())
        assert set(model.assignments) == set(vectors.ids)
        for c in model.cluster_ids():
            assert model.centroids[c].shape == (32,)
            assert len(model.top_terms[c]) <= 5

    def test_noise_points_keep_noise_assignment(self):
        exts, vectors, proj, labels = small_side()
        labels = labels.copy()
        labels[0] = -1
        model = build_cluster_model("problem", exts, vectors, proj, labels,
                                    MockGenClient())
        noisy_id = vectors.ids[0]
        assert model.assignments[noisy_id] == -1
        assert model.n_noise() == 1


class TestMerge:
    def build(self, coords_by_cluster, labels_by_cluster, per=4):
        exts, rows, coords, labels = [], [], [], []
        i = 0
        for c, center in coords_by_cluster.items():
            for _ in range(per):
                i += 1
                exts.append(make_ext(i, problem=f"shared topic {labels_by_cluster[c]}",
                                     method="m"))
                labels.append(c)
                coords.append(center)
        ext_set = ExtractionSet(exts)
        table = embed_aspects(ext_set, HashingProvider(dim=16))
        proj = Projection2D(ids=list(table.problem.ids),
                            coords=np.array(coords, dtype=np.float64),
                            params={})
        model = build_cluster_model("problem", ext_set, table.problem, proj,
                                    np.array(labels), MockGenClient())
        return model, proj, table.problem

    def test_same_label_close_clusters_merge(self):
        model, proj, vectors = self.build({0: (0, 0), 1: (1, 0), 2: (50, 0)},
                                          {0: "A", 1: "A", 2: "B"})
        # force identical labels for the near pair
        model.labels[0] = model.labels[1] = "Shared Topic"
        merged = merge_adjacent_same_label(model, proj, 5.0, vectors=vectors)
        assert sorted(merged.labels) == [0, 2]
        assert set(merged.assignments.values()) == {0, 2}

    def test_distant_same_label_stays_split(self):
        model, proj, vectors = self.build({0: (0, 0), 1: (50, 0)},
                                          {0: "A", 1: "A"})
        model.labels[0] = model.labels[1] = "Same Label"
        merged = merge_adjacent_same_label(model, proj, 5.0, vectors=vectors)
        assert sorted(merged.labels) == [0, 1]

    def test_merge_is_idempotent(self):
        model, proj, vectors = self.build({0: (0, 0), 1: (1, 0), 2: (2, 0)},
                                          {0: "A", 1: "A", 2: "A"})
        for c in (0, 1, 2):
            model.labels[c] = "A"
        once = merge_adjacent_same_label(model, proj, 1.5, vectors=vectors)
        twice = merge_adjacent_same_label(once, proj, 1.5, vectors=vectors)
        assert once.labels == twice.labels
        assert once.assignments == twice.assignments

    def test_centroid_recomputed_from_members(self):
        model, proj, vectors = self.build({0: (0, 0), 1: (1, 0)},
                                          {0: "A", 1: "A"})
        model.labels[0] = model.labels[1] = "A"
        merged = merge_adjacent_same_label(model, proj, 5.0, vectors=vectors)
        members = [p for p, c in merged.assignments.items() if c == 0]
        expected = np.mean([vectors.row(p) for p in members], axis=0)
        assert np.allclose(merged.centroids[0], expected, atol=1e-6)


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        exts, vectors, proj, labels = small_side()
        model = build_cluster_model("problem", exts, vectors, proj, labels,
                                    MockGenClient(), top_k=4)
        save_cluster_model(model, tmp_path)
        again = load_cluster_model(tmp_path, "problem")
        assert again.labels == model.labels
        assert again.assignments == model.assignments
        assert again.top_terms == model.top_terms
        for c in model.cluster_ids():
            assert np.allclose(again.centroids[c], model.centroids[c],
                               atol=1e-7)

    def test_load_missing_side(self, tmp_path):
        with pytest.raises(ClusterModelError):
            load_cluster_model(tmp_path, "problem")


class TestRecomputeTerms:
    def test_terms_rank_family_specific_token_first(self):
        # the family digit is the only token unique to each cluster
        exts, vectors, proj, labels = small_side()
        model = build_cluster_model("problem", exts, vectors, proj, labels,
                                    MockGenClient(), top_k=6)
        recompute_top_terms(model, exts, k=6)
        for family in (0, 1, 2):
            assert model.top_terms[family][0] == str(family)
