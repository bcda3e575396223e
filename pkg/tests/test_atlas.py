"""Bipartite graph, degree laws, and the investigation partition."""

import json
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from sciatlas.atlas import (
    AtlasError,
    BipartiteGraph,
    build_bipartite,
    community_breakdown,
    degree_stats,
    export_graph,
    fit_lognormal,
    load_graph,
    partition_investigation,
    partition_table,
)
from sciatlas.clusters import ClusterModel
from sciatlas.corpus import Corpus
from sciatlas.extraction import ExtractionSet

from conftest import make_ext, make_pub

DATA = Path(__file__).resolve().parent / "data"


def model_for(side, assignments, labels=None):
    clusters = sorted(set(c for c in assignments.values() if c >= 0))
    return ClusterModel(
        side=side,
        labels=labels or {c: f"{side} cluster {c}" for c in clusters},
        assignments=dict(assignments),
        centroids={c: np.zeros(4) for c in clusters},
        top_terms={c: [] for c in clusters},
    )


def toy_graph():
    """3 problems x 3 methods with known multiplicities."""
    exts, p_assign, m_assign = [], {}, {}
    links = [(0, 0), (0, 0), (0, 1), (1, 1), (2, 2), (2, 0)]
    for i, (p, m) in enumerate(links, start=1):
        ext = make_ext(i, problem=f"prob {p}", method=f"meth {m}")
        exts.append(ext)
        p_assign[ext.pub_id] = p
        m_assign[ext.pub_id] = m
    pm = model_for("problem", p_assign)
    mm = model_for("method", m_assign)
    graph, report = build_bipartite(ExtractionSet(exts), pm, mm)
    return graph, report, pm, mm, ExtractionSet(exts)


class TestBuild:
    def test_weights_count_distinct_publications(self):
        graph, report, *_ = toy_graph()
        assert graph.n_edges == 6
        assert graph.weight(0, 0) == 2
        assert graph.weight(0, 1) == 1
        assert graph.weight(1, 0) == 0
        assert not report.skipped

    def test_non_ai4science_and_noise_skipped(self):
        good = make_ext(1, problem="p", method="m")
        no_ai = make_ext(2, problem="p", method="m", ai=False)
        noisy = make_ext(3, problem="p", method="m")
        exts = ExtractionSet([good, no_ai, noisy])
        pm = model_for("problem", {e.pub_id: 0 for e in exts})
        mm = model_for("method", {good.pub_id: 0, no_ai.pub_id: 0,
                                  noisy.pub_id: -1})
        graph, report = build_bipartite(exts, pm, mm)
        assert graph.n_edges == 1
        assert [pub for pub, _ in report.skipped] == [noisy.pub_id]
        assert "skipped" in report.to_text()

    def test_unknown_node_rejected(self):
        with pytest.raises(AtlasError):
            BipartiteGraph(problem_nodes=frozenset({0}),
                           method_nodes=frozenset({0}),
                           edges=((0, 5, "pub-x"),))

    def test_neighbors(self):
        graph, *_ = toy_graph()
        assert graph.neighbors("problem", 0) == {0, 1}
        assert graph.neighbors("method", 0) == {0, 2}


class TestDegrees:
    def test_unweighted_counts_partners(self):
        graph, *_ = toy_graph()
        stats_p = degree_stats(graph, "problem", weighted=False)
        assert stats_p.degrees == {0: 2, 1: 1, 2: 2}

    def test_weighted_sums_multiplicity(self):
        graph, *_ = toy_graph()
        stats_p = degree_stats(graph, "problem", weighted=True)
        assert stats_p.degrees == {0: 3, 1: 1, 2: 2}
        assert stats_p.mean == pytest.approx(2.0)

    def test_isolated_nodes_have_zero_degree(self):
        exts = ExtractionSet([make_ext(1, problem="p", method="m")])
        pm = model_for("problem", {"pub-00001": 0},
                       labels={0: "a", 7: "isolated"})
        mm = model_for("method", {"pub-00001": 0})
        pm.centroids[7] = np.zeros(4)
        graph, _ = build_bipartite(exts, pm, mm)
        degrees = degree_stats(graph, "problem").degrees
        assert degrees[7] == 0


class TestLogNormal:
    def test_closed_form(self):
        # log-degrees 1..5: mu is their mean, sigma the population std
        samples = np.exp([1.0, 2.0, 3.0, 4.0, 5.0] * 2)
        fit = fit_lognormal(samples)
        assert abs(fit.mu - 3.0) < 1e-9
        assert abs(fit.sigma - np.sqrt(2.0)) < 1e-9
        assert fit.n_used == 10 and fit.n_filtered == 0

    def test_parameter_recovery_on_large_sample(self):
        rng = np.random.default_rng(11)
        mu, sigma = 1.3, 0.7
        samples = rng.lognormal(mu, sigma, size=10_000)
        fit = fit_lognormal(samples)
        assert abs(fit.mu - mu) <= 0.05 * mu
        assert abs(fit.sigma - sigma) <= 0.05 * sigma
        # KS distance against the fitted normal should be small
        assert fit.goodness < 0.02

    def test_non_positive_filtered(self):
        samples = np.concatenate([np.exp(np.ones(12)), [0.0, -3.0]])
        fit = fit_lognormal(samples)
        assert fit.n_used == 12 and fit.n_filtered == 2
        assert fit.sigma == 0.0 and fit.goodness == 0.0

    def test_too_few_positive(self):
        with pytest.raises(AtlasError):
            fit_lognormal([1.0] * 9)

    def test_degenerate_sigma_pdf_safe(self):
        fit = fit_lognormal(np.full(10, np.e))
        assert fit.mu == pytest.approx(1.0)
        assert fit.sigma == 0.0


@pytest.fixture(scope="module")
def fixture():
    return json.loads((DATA / "regression_expected.json").read_text())


class TestPartition:
    @pytest.mark.parametrize("key,flag", [("with_intercept", False),
                                          ("through_origin", True)])
    def test_matches_ols_reference(self, fixture, key, flag):
        totals = {i: t for i, t in enumerate(fixture["totals"])}
        ai = {i: a for i, a in enumerate(fixture["ai_counts"])}
        part = partition_investigation(totals, ai, through_origin=flag)
        expected = fixture[key]
        assert abs(part.slope - expected["slope"]) < 1e-9
        assert abs(part.intercept - expected["intercept"]) < 1e-9
        lower, upper = part.band(np.array(fixture["totals"]))
        assert np.allclose(lower, expected["band_lower"], atol=1e-9, rtol=0)
        assert np.allclose(upper, expected["band_upper"], atol=1e-9, rtol=0)
        assert sorted(part.well) == expected["well"]
        assert sorted(part.under) == expected["under"]

    def test_scale_consistency(self, fixture):
        # rescaling the x axis must not change who is flagged
        totals = {i: t for i, t in enumerate(fixture["totals"])}
        ai = {i: a for i, a in enumerate(fixture["ai_counts"])}
        base = partition_investigation(totals, ai)
        rng = np.random.default_rng(5)
        for _ in range(10):
            c = float(rng.uniform(0.01, 100.0))
            scaled = partition_investigation(
                {i: c * t for i, t in totals.items()}, ai)
            assert sorted(scaled.well) == sorted(base.well)
            assert sorted(scaled.under) == sorted(base.under)
            assert scaled.slope * c == pytest.approx(base.slope, rel=1e-9)
            assert scaled.intercept == pytest.approx(base.intercept, rel=1e-9)

    def test_planted_outliers_detected(self, fixture):
        totals = {i: t for i, t in enumerate(fixture["totals"])}
        ai = {i: a for i, a in enumerate(fixture["ai_counts"])}
        part = partition_investigation(totals, ai)
        assert {3, 17} <= set(part.well)
        assert {8, 25} <= set(part.under)

    def test_needs_three_clusters(self):
        with pytest.raises(AtlasError):
            partition_investigation({0: 10, 1: 20}, {0: 1, 1: 2})

    def test_identical_totals_rejected(self):
        with pytest.raises(AtlasError):
            partition_investigation({0: 5, 1: 5, 2: 5}, {0: 1, 1: 2, 2: 3})

    def test_classify_matches_band(self, fixture):
        totals = {i: t for i, t in enumerate(fixture["totals"])}
        ai = {i: a for i, a in enumerate(fixture["ai_counts"])}
        part = partition_investigation(totals, ai)
        for i in range(len(fixture["totals"])):
            cls = part.classify(fixture["totals"][i], fixture["ai_counts"][i])
            if i in part.well:
                assert cls == "well"
            elif i in part.under:
                assert cls == "under"
            else:
                assert cls == "excluded"

    def test_table_lists_every_cluster(self):
        totals = {0: 10, 1: 50, 2: 200}
        ai = {0: 3, 1: 20, 2: 60}
        part = partition_investigation(totals, ai)
        text = partition_table(part, {0: "a", 1: "b", 2: "c"}, totals, ai)
        lines = text.strip().splitlines()
        assert len(lines) == 4
        assert lines[0].startswith("cluster_id")


class TestExport:
    def test_round_trip_with_threshold(self, tmp_path):
        graph, _, pm, mm, _ = toy_graph()
        export_graph(graph, 2, tmp_path, problem_labels=pm.labels,
                     method_labels=mm.labels)
        loaded, p_labels, m_labels = load_graph(tmp_path)
        # only the weight-2 pair survives min_edge_weight=2
        assert loaded.pair_weights() == {(0, 0): 2}
        assert p_labels[0] == pm.labels[0]

    def test_zero_threshold_keeps_everything(self, tmp_path):
        graph, _, pm, mm, _ = toy_graph()
        export_graph(graph, 0, tmp_path)
        loaded, *_ = load_graph(tmp_path)
        assert loaded.pair_weights() == graph.pair_weights()

    def test_graphml_optional(self, tmp_path):
        graph, _, pm, mm, _ = toy_graph()
        export_graph(graph, 1, tmp_path, graphml=True)
        text = (tmp_path / "graph.graphml").read_text()
        assert text.startswith("<graphml")
        assert text.count("<edge ") == 5  # one element per distinct pair


class TestCommunities:
    def test_breakdown_counts_by_community(self):
        graph, _, pm, mm, exts = toy_graph()
        pubs = [make_pub(i, venue="Nature" if i % 2 else "NeurIPS",
                         community="science" if i % 2 else "ai")
                for i in range(1, 7)]
        corpus = Corpus(pubs)
        tables = community_breakdown(corpus, exts, pm, mm)
        total = sum(count for comm in tables.values()
                    for cluster, label, count in comm["problem"])
        assert total == 6
        for comm in tables.values():
            counts = [c for *_, c in comm["problem"]]
            assert counts == sorted(counts, reverse=True)
