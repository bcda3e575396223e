"""End-to-end drive of the command line: stages, reruns, and exit codes."""

import contextlib
import io
import json

import pytest

from sciatlas.cli import main

from conftest import MINI_DIR

MINI_CONFIG = str(MINI_DIR / "config.json")


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def project(tmp_path_factory):
    root = tmp_path_factory.mktemp("proj")
    code, out, err = run([
        "pipeline", str(root),
        "--input", str(MINI_DIR / "corpus.jsonl"),
        "--config", MINI_CONFIG,
    ])
    assert code == 0, err
    return root, out


EXPECTED_FILES = [
    "corpus/corpus.jsonl",
    "corpus/venue_map.json",
    "corpus/load_report.txt",
    "extractions/extractions.jsonl",
    "extractions/batch_report.txt",
    "extractions/stats.txt",
    "embeddings/problem.vec",
    "embeddings/method.vec",
    "embeddings/usage.vec",
    "clusters/projection_problem.tsv",
    "clusters/projection_method.tsv",
    "clusters/labels_problem.tsv",
    "clusters/assignments_method.tsv",
    "atlas/edges.tsv",
    "atlas/nodes.tsv",
    "atlas/degrees.json",
    "atlas/lognormal.json",
    "atlas/partition_problem.tsv",
    "atlas/communities.json",
    "atlas/graph_report.txt",
    "predictions/katz_sci_to_ai.tsv",
    "predictions/node2vec_ai_to_sci.tsv",
    "predictions/llm_rag_sci_to_ai.tsv",
    "predictions/llm_graph_ai_to_sci.tsv",
    "predictions/imitation_sci_to_ai.tsv",
    "predictions/truth_cluster_sci_to_ai.json",
    "predictions/truth_pub_ai_to_sci.json",
    "predictions/reference_links.json",
    "reports/metrics.tsv",
    "reports/metrics.json",
    "reports/novel_links.json",
    "reports/textgen_sci_to_ai.txt",
    "plots/map.svg",
    "plots/degree_hist.svg",
    "plots/cluster_scatter_problem.svg",
    "plots/cluster_scatter_method.svg",
    "config.resolved.json",
]


class TestPipeline:
    def test_finishes_and_reports(self, project):
        _, out = project
        assert "pipeline: done" in out

    @pytest.mark.parametrize("relpath", EXPECTED_FILES)
    def test_artifact_written(self, project, relpath):
        root, _ = project
        assert (root / relpath).exists()

    def test_every_stage_stamped(self, project):
        root, _ = project
        resolved = json.loads((root / "config.resolved.json").read_text())
        assert resolved["seed"] == 0
        for stage_dir in ("corpus", "extractions", "embeddings", "clusters",
                          "atlas", "predictions", "reports", "plots"):
            meta = json.loads((root / stage_dir / "meta.json").read_text())
            assert meta["config_hash"]
            assert meta["seed"] == 0
            assert "inputs" in meta

    def test_metrics_cover_methods_and_partitions(self, project):
        root, _ = project
        lines = (root / "reports" / "metrics.tsv").read_text().splitlines()
        header, rows = lines[0].split("\t"), lines[1:]
        methods = {row.split("\t")[header.index("method")] for row in rows}
        assert methods == {"katz", "node2vec", "llm_rag", "llm_graph",
                           "imitation"}
        partitions = {row.split("\t")[header.index("partition")]
                      for row in rows}
        assert partitions == {"all", "well", "under"}

    def test_rerun_skips_fresh_stages(self, project):
        root, _ = project
        before = (root / "reports" / "metrics.tsv").stat().st_mtime_ns
        code, out, err = run(["pipeline", str(root), "--config", MINI_CONFIG])
        assert code == 0, err
        # ingest is not re-attempted without --input; the other 7 skip
        assert out.count("skipped") == 7
        after = (root / "reports" / "metrics.tsv").stat().st_mtime_ns
        assert before == after

    def test_changed_config_needs_force(self, project):
        root, _ = project
        code, _, err = run(["extract", str(root), "--config", MINI_CONFIG,
                            "--seed", "1"])
        assert code == 2
        assert "--force" in err

    def test_force_reruns_stage(self, project):
        root, _ = project
        code, out, err = run(["extract", str(root), "--config", MINI_CONFIG,
                              "--force"])
        assert code == 0, err
        assert "skipped" not in out

    def test_deterministic_flag_recorded(self, project):
        root, _ = project
        code, _, err = run(["extract", str(root), "--config", MINI_CONFIG,
                            "--force", "--deterministic"])
        assert code == 0, err
        meta = json.loads((root / "extractions" / "meta.json").read_text())
        assert meta["deterministic"] is True

    def test_k_override_changes_eval(self, project):
        root, _ = project
        code, _, err = run(["eval", str(root), "--config", MINI_CONFIG,
                            "--force", "--k", "2"])
        assert code == 0, err
        lines = (root / "reports" / "metrics.tsv").read_text().splitlines()
        header = lines[0].split("\t")
        ks = {row.split("\t")[header.index("k")] for row in lines[1:]}
        assert ks == {"2"}
        # restore the module project for any later readers
        code, _, _ = run(["eval", str(root), "--config", MINI_CONFIG,
                          "--force"])
        assert code == 0


class TestFailureModes:
    def test_missing_prerequisite_names_producer(self, tmp_path):
        code, _, err = run(["extract", str(tmp_path / "empty")])
        assert code == 2
        assert "corpus" in err
        assert "sciatlas ingest" in err

    def test_pipeline_without_corpus_or_input(self, tmp_path):
        code, _, err = run(["pipeline", str(tmp_path / "empty")])
        assert code == 2
        assert "--input" in err

    def test_unknown_command(self):
        code, _, err = run(["transmogrify"])
        assert code == 1
        assert "No such command" in err

    def test_no_arguments_shows_usage(self):
        code, _, err = run([])
        assert code == 1
        assert "Usage:" in err

    def test_bad_backend_choice(self, tmp_path):
        code, _, err = run(["extract", str(tmp_path / "p"), "--backend",
                            "quantum"])
        assert code == 1

    def test_bad_k_value(self, tmp_path):
        code, _, err = run(["eval", str(tmp_path / "p"), "--k", " , "])
        assert code == 2
        assert "--k" in err

    def test_lock_conflict(self, project):
        root, _ = project
        lock = root / ".lock"
        lock.write_text("12345\n")
        try:
            code, _, err = run(["extract", str(root), "--config",
                                MINI_CONFIG])
            assert code == 2
            assert "locked" in err
        finally:
            lock.unlink()

    def test_lock_released_after_run(self, project):
        root, _ = project
        assert not (root / ".lock").exists()

    def test_ingest_requires_venue_map(self, tmp_path):
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text(
            '{"format": "sciatlas-corpus", "version": 1}\n'
            '{"pub_id": "pub-1", "title": "t", "abstract": "a", '
            '"venue": "Nature", "year": 2020}\n')
        code, _, err = run(["ingest", str(tmp_path / "p"),
                            "--input", str(corpus)])
        assert code == 2
        assert "venue" in err.lower()

    def test_ingest_rejects_headerless_file(self, tmp_path):
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text('{"pub_id": "pub-1"}\n')
        (tmp_path / "venue_map.json").write_text(
            '{"Nature": "science"}\n')
        code, _, err = run(["ingest", str(tmp_path / "p"),
                            "--input", str(corpus)])
        assert code == 2
        assert "header" in err
