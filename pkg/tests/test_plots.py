"""SVG figure rendering: categories, overlays, and byte determinism."""

import numpy as np
import pytest

from sciatlas.atlas import fit_lognormal, partition_investigation
from sciatlas.plots import (
    CATEGORY_LABELS,
    PlotError,
    categorize,
    plot_cluster_scatter,
    plot_degree_hist,
    plot_map,
)
from sciatlas.projection import Projection2D

from conftest import make_ext


def small_projection(n=12, seed=0):
    rng = np.random.default_rng(seed)
    ids = [f"pub-{i:05d}" for i in range(n)]
    return Projection2D(ids=ids, coords=rng.normal(size=(n, 2)))


class TestCategorize:
    def test_all_four_categories(self):
        assert categorize(make_ext(1, problem="p", method="m")) == "ai4science"
        assert categorize(make_ext(2, problem="p", method=None)) == \
            "science_non_ai"
        assert categorize(make_ext(3, problem=None, method="m")) == \
            "ai_non_science"
        assert categorize(make_ext(4, problem=None, method=None)) == "other"

    def test_non_scientific_problem_with_ai(self):
        ext = make_ext(5, problem="p", method="m", scientific=False)
        assert categorize(ext) == "ai_non_science"


class TestMap:
    def categories(self, ids):
        keys = ["ai4science", "science_non_ai", "ai_non_science", "other"]
        return {pid: keys[i % 4] for i, pid in enumerate(ids)}

    def test_writes_svg_with_full_legend(self, tmp_path):
        proj = small_projection()
        path = tmp_path / "map.svg"
        plot_map(proj, self.categories(proj.ids), path, title="atlas")
        text = path.read_text()
        assert text.lstrip().startswith("<?xml")
        for label in CATEGORY_LABELS.values():
            assert label in text

    def test_empty_category_keeps_legend_entry(self, tmp_path):
        proj = small_projection()
        path = tmp_path / "map.svg"
        plot_map(proj, {pid: "ai4science" for pid in proj.ids}, path)
        assert CATEGORY_LABELS["science_non_ai"] in path.read_text()

    def test_missing_ids_default_to_other(self, tmp_path):
        proj = small_projection()
        plot_map(proj, {}, tmp_path / "map.svg")

    def test_byte_determinism(self, tmp_path):
        proj = small_projection()
        cats = self.categories(proj.ids)
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        plot_map(proj, cats, a, seed=3, stamp="stage=plot")
        plot_map(proj, cats, b, seed=3, stamp="stage=plot")
        assert a.read_bytes() == b.read_bytes()

    def test_stamp_recorded(self, tmp_path):
        proj = small_projection()
        path = tmp_path / "map.svg"
        plot_map(proj, {}, path, stamp="sciatlas stage=plot-v1 config=abc")
        assert "sciatlas stage=plot-v1" in path.read_text()

    def test_empty_projection(self, tmp_path):
        proj = Projection2D(ids=[], coords=np.zeros((0, 2)))
        with pytest.raises(PlotError, match="no points"):
            plot_map(proj, {}, tmp_path / "map.svg")


class TestDegreeHist:
    def test_panels_with_and_without_fit(self, tmp_path):
        rng = np.random.default_rng(0)
        degrees = rng.lognormal(1.0, 0.6, size=200)
        fit = fit_lognormal(degrees)
        path = tmp_path / "hist.svg"
        plot_degree_hist([("problem side", degrees, fit),
                          ("method side", degrees[:40], None)], path)
        text = path.read_text()
        assert "problem side" in text and "method side" in text
        assert "log-normal" in text

    def test_zero_degrees_dropped(self, tmp_path):
        path = tmp_path / "hist.svg"
        plot_degree_hist([("side", np.array([0.0, 0.0, 1.0, 2.0, 4.0]),
                           None)], path)
        assert path.exists()

    def test_all_zero_panel_annotated(self, tmp_path):
        path = tmp_path / "hist.svg"
        plot_degree_hist([("side", np.zeros(5), None)], path)
        assert "no nonzero degrees" in path.read_text()

    def test_no_panels(self, tmp_path):
        with pytest.raises(PlotError, match="panels"):
            plot_degree_hist([], tmp_path / "hist.svg")

    def test_byte_determinism(self, tmp_path):
        degrees = np.array([1.0, 2.0, 3.0, 5.0, 9.0])
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        plot_degree_hist([("side", degrees, None)], a, seed=1)
        plot_degree_hist([("side", degrees, None)], b, seed=1)
        assert a.read_bytes() == b.read_bytes()


class TestClusterScatter:
    def partition_inputs(self):
        rng = np.random.default_rng(8)
        totals = {c: float(20 + 10 * c) for c in range(12)}
        ai = {c: 0.5 * totals[c] + float(rng.normal(0, 2.0))
              for c in range(12)}
        ai[3] = 0.5 * totals[3] + 40.0
        ai[7] = max(0.0, 0.5 * totals[7] - 40.0)
        return totals, ai

    def test_renders_band_and_flagged_labels(self, tmp_path):
        totals, ai = self.partition_inputs()
        part = partition_investigation(totals, ai)
        assert 3 in part.well and 7 in part.under
        path = tmp_path / "scatter.svg"
        plot_cluster_scatter(part, totals, ai, path,
                             labels={c: f"cluster-{c}" for c in totals},
                             title="problems")
        text = path.read_text()
        assert "95% CI band" in text
        assert "cluster-3" in text and "cluster-7" in text
        assert "cluster-0" not in text  # unflagged clusters stay unlabeled

    def test_no_clusters(self, tmp_path):
        totals, ai = self.partition_inputs()
        part = partition_investigation(totals, ai)
        with pytest.raises(PlotError, match="no clusters"):
            plot_cluster_scatter(part, {}, {}, tmp_path / "scatter.svg")

    def test_byte_determinism(self, tmp_path):
        totals, ai = self.partition_inputs()
        part = partition_investigation(totals, ai)
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        plot_cluster_scatter(part, totals, ai, a, seed=2)
        plot_cluster_scatter(part, totals, ai, b, seed=2)
        assert a.read_bytes() == b.read_bytes()
