"""Command-line pipeline over a project directory.

Each subcommand owns one stage and one output directory:

    ingest   corpus/       validated corpus + venue map copy
    extract  extractions/  per-paper aspects via the gen backend
    embed    embeddings/   aspect vectors via the embedding backend
    cluster  clusters/     2D layouts, cluster assignments, labels
    atlas    atlas/        bipartite graph, degrees, partitions
    predict  predictions/  five prediction runs per direction + truth
    eval     reports/      ranking/novel-link/text-generation reports
    plot     plots/        map, degree histogram, cluster scatter

`pipeline` chains them all. A stage records the config hash and the
digests of its inputs in `<dir>/meta.json`; reruns skip fresh stages
and refuse to overwrite stale ones unless --force. Exit codes: 0
success, 1 usage, 2 data error, 3 backend (generation/embedding)
failure.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import click
import numpy as np

from ._util import atomic_write_text
from .atlas import (
    AtlasError,
    build_bipartite,
    community_breakdown,
    degree_stats,
    export_graph,
    fit_lognormal,
    partition_investigation,
    partition_table,
)
from .clusters import (
    ClusterModelError,
    build_cluster_model,
    load_cluster_model,
    merge_adjacent_same_label,
    recompute_top_terms,
    save_cluster_model,
)
from .config import (
    ConfigError,
    ProjectConfig,
    config_from_dict,
    load_config,
    save_config,
)
from .corpus import (
    CorpusError,
    load_corpus,
    load_venue_map,
    split_by_year,
    corpus_stats,
    write_corpus,
)
from .density import ClusterError, cluster_hdbscan
from .embedding import (
    AspectVectors,
    CachedEmbeddingProvider,
    EmbeddingError,
    HashingProvider,
    RemoteEmbeddingProvider,
    embed_aspects,
    load_vectors,
    save_vectors,
)
from .evaluate import (
    CosineScorer,
    EvalError,
    count_novel_links,
    precision_recall_f1_at_k,
    rouge1_f,
    text_gen_report,
)
from .extraction import (
    BatchError,
    ExtractionCache,
    ExtractionError,
    ExtractionSet,
    GenError,
    MockGenClient,
    RemoteGenClient,
    ReplayCacheClient,
    batch_extract,
)
from .linkpred import (
    AI_TO_SCI,
    DIRECTIONS,
    SCI_TO_AI,
    LinkPredError,
    PredictionItem,
    PredictionRun,
    generate_links_rag,
    imitation_baseline,
    katz_scores,
    map_generation_to_cluster,
    predict_katz,
    predict_llm_graph,
    predict_node2vec,
    retrieve_similar,
    train_node2vec,
)
from .node2vec import Node2VecError
from .plots import PlotError, categorize, plot_cluster_scatter, plot_degree_hist, plot_map
from .projection import Projection2D, ProjectionError, project_2d

STAGE_DIRS = {
    "ingest": "corpus",
    "extract": "extractions",
    "embed": "embeddings",
    "cluster": "clusters",
    "atlas": "atlas",
    "predict": "predictions",
    "eval": "reports",
    "plot": "plots",
}
STAGE_VERSIONS = {
    "ingest": 1,
    "extract": 1,
    "embed": 1,
    "cluster": 1,
    "atlas": 1,
    "predict": 1,
    "eval": 1,
    "plot": 1,
}
SIDES = ("problem", "method")
RANK_METHODS = ("katz", "node2vec", "llm_graph", "llm_rag", "imitation")
TEXT_METHODS = ("llm_rag", "llm_graph", "imitation")


class ProjectError(Exception):
    """Project-level problem: missing artifact, lock conflict, stale hash."""


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _require(path: Path, artifact: str, producer: str) -> Path:
    if not path.exists():
        raise ProjectError(
            f"missing {artifact} at {path}; run `sciatlas {producer}` first")
    return path


@contextmanager
def project_lock(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    lock = root / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ProjectError(
            f"project {root} is locked by another run; delete {lock} if it "
            "is stale") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode("ascii"))
        os.close(fd)
        yield
    finally:
        try:
            lock.unlink()
        except FileNotFoundError:
            pass


class StageContext:
    """Paths, effective config, and freshness bookkeeping for one run."""

    def __init__(self, root: Path, config: ProjectConfig,
                 deterministic: bool = False, force: bool = False):
        self.root = Path(root)
        self.config = config
        self.deterministic = deterministic
        self.force = force
        self.config_hash = config.config_hash()

    def dir(self, stage: str) -> Path:
        return self.root / STAGE_DIRS[stage]

    def stamp(self, stage: str) -> str:
        return (f"sciatlas stage={stage}-v{STAGE_VERSIONS[stage]} "
                f"config={self.config_hash} seed={self.config.seed}")

    def _meta(self, stage: str, inputs: list) -> dict:
        digests = {}
        for p in inputs:
            try:
                key = str(p.relative_to(self.root))
            except ValueError:
                key = str(p)
            digests[key] = _file_digest(p)
        return {
            "stage": stage,
            "stage_version": STAGE_VERSIONS[stage],
            "config_hash": self.config_hash,
            "seed": self.config.seed,
            "deterministic": self.deterministic,
            "inputs": digests,
        }

    def plan(self, stage: str, inputs: list) -> bool:
        """True when the stage must run; False when fresh and skippable."""
        meta_path = self.dir(stage) / "meta.json"
        current = self._meta(stage, inputs)
        if not meta_path.exists():
            return True
        try:
            recorded = json.loads(meta_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            return True
        if recorded == current:
            if self.force:
                return True
            click.echo(f"{stage}: up to date (config {self.config_hash}), skipped")
            return False
        if not self.force:
            raise ProjectError(
                f"{stage}: existing artifacts in {self.dir(stage)} were made "
                f"under config hash {recorded.get('config_hash')} (or older "
                f"inputs) but the current hash is {self.config_hash}; pass "
                "--force to overwrite")
        return True

    def write_meta(self, stage: str, inputs: list) -> None:
        meta = self._meta(stage, inputs)
        atomic_write_text(self.dir(stage) / "meta.json",
                          json.dumps(meta, indent=2, sort_keys=True) + "\n")

    # -- backends -----------------------------------------------------

    def gen_client(self):
        gen = self.config.gen
        if gen.kind == "mock":
            return MockGenClient(model_id=gen.model_id)
        if gen.kind == "remote":
            return RemoteGenClient(
                base_url=gen.base_url, model_id=gen.model_id,
                api_key_env=gen.api_key_env,
                rate_limit=gen.rate_limit_per_s or None)
        cache_dir = Path(gen.cache_dir) if gen.cache_dir else self.root / "cache" / "gen"
        fallback = None
        if gen.base_url:
            fallback = RemoteGenClient(
                base_url=gen.base_url, model_id=gen.model_id,
                api_key_env=gen.api_key_env,
                rate_limit=gen.rate_limit_per_s or None)
        return ReplayCacheClient(cache_dir, fallback=fallback,
                                 model_id=gen.model_id)

    def embed_provider(self):
        emb = self.config.embed
        if emb.kind == "hashing":
            return HashingProvider(dim=emb.dim, seed=emb.hash_seed)
        remote = RemoteEmbeddingProvider(base_url=emb.base_url,
                                         model_id=emb.model_id, dim=emb.dim)
        cache_dir = Path(emb.cache_dir) if emb.cache_dir else self.root / "cache" / "embeddings"
        return CachedEmbeddingProvider(remote, cache_dir)

    # -- shared loaders ------------------------------------------------

    def load_corpus(self):
        corpus_file = _require(self.dir("ingest") / "corpus.jsonl",
                               "corpus", "ingest")
        venue_file = _require(self.dir("ingest") / "venue_map.json",
                              "venue map", "ingest")
        corpus, report = load_corpus(corpus_file, load_venue_map(venue_file))
        if report.rejected:
            raise ProjectError(
                f"project corpus {corpus_file} has {len(report.rejected)} "
                "invalid records; re-run `sciatlas ingest`")
        return corpus

    def load_extractions(self) -> ExtractionSet:
        path = _require(self.dir("extract") / "extractions.jsonl",
                        "extractions", "extract")
        return ExtractionSet.load(path)

    def load_vectors(self, side: str) -> AspectVectors:
        base = self.dir("embed") / side
        _require(base.with_suffix(".json"), f"{side} vectors", "embed")
        return load_vectors(base)

    def load_cluster_models(self):
        directory = self.dir("cluster")
        for side in SIDES:
            _require(directory / f"assignments_{side}.tsv",
                     f"{side} cluster assignments", "cluster")
        return (load_cluster_model(directory, "problem"),
                load_cluster_model(directory, "method"))


# ---------------------------------------------------------------------
# stages


def stage_ingest(ctx: StageContext, input_path: Path, venues_path: Path | None) -> None:
    input_path = Path(input_path)
    if venues_path is None:
        venues_path = input_path.parent / "venue_map.json"
    if not Path(venues_path).exists():
        raise ProjectError(
            f"venue map not found at {venues_path}; pass --venues")
    if not ctx.plan("ingest", [input_path, Path(venues_path)]):
        return
    out = ctx.dir("ingest")
    out.mkdir(parents=True, exist_ok=True)
    venue_map = load_venue_map(venues_path)
    corpus, report = load_corpus(input_path, venue_map)
    if len(corpus) == 0:
        raise CorpusError(f"no valid records in {input_path}")
    write_corpus(corpus, out / "corpus.jsonl")
    shutil.copyfile(venues_path, out / "venue_map.json")
    atomic_write_text(out / "load_report.txt", report.to_text())
    ctx.write_meta("ingest", [input_path, Path(venues_path)])
    click.echo(f"ingest: {len(corpus)} records"
               + (f", {len(report.rejected)} rejected" if report.rejected else ""))


def stage_extract(ctx: StageContext) -> None:
    corpus_file = _require(ctx.dir("ingest") / "corpus.jsonl", "corpus", "ingest")
    venue_file = _require(ctx.dir("ingest") / "venue_map.json", "venue map", "ingest")
    if not ctx.plan("extract", [corpus_file, venue_file]):
        return
    corpus = ctx.load_corpus()
    client = ctx.gen_client()
    cache = None
    if ctx.config.gen.kind != "mock":
        cache = ExtractionCache(ctx.root / "cache" / "extraction")
    parallelism = 1 if ctx.deterministic else ctx.config.gen.parallelism
    extractions, report = batch_extract(
        corpus, client, parallelism=parallelism,
        prompt_version=ctx.config.prompt_version, cache=cache,
        min_success_fraction=ctx.config.gen.min_success_fraction)
    out = ctx.dir("extract")
    out.mkdir(parents=True, exist_ok=True)
    extractions.save(out / "extractions.jsonl")
    atomic_write_text(out / "batch_report.txt", report.to_text())
    atomic_write_text(out / "stats.txt",
                      corpus_stats(corpus, extractions).to_text())
    ctx.write_meta("extract", [corpus_file, venue_file])
    click.echo(f"extract: {report.n_ok}/{report.n_total} records ok "
               f"({client.calls} generation calls)")


def stage_embed(ctx: StageContext) -> None:
    ext_file = _require(ctx.dir("extract") / "extractions.jsonl",
                        "extractions", "extract")
    if not ctx.plan("embed", [ext_file]):
        return
    extractions = ExtractionSet.load(ext_file)
    provider = ctx.embed_provider()
    table = embed_aspects(extractions, provider)
    out = ctx.dir("embed")
    out.mkdir(parents=True, exist_ok=True)
    for side in ("problem", "method", "usage"):
        save_vectors(getattr(table, side), out / side)
    ctx.write_meta("embed", [ext_file])
    click.echo(f"embed: {len(table.problem.ids)} problem / "
               f"{len(table.method.ids)} method / "
               f"{len(table.usage.ids)} usage vectors")


def _projection_params(ctx: StageContext) -> dict:
    cl = ctx.config.clustering
    return {
        "n_neighbors": cl.n_neighbors,
        "n_epochs": cl.n_epochs,
        "learning_rate": cl.learning_rate,
        "n_negative_samples": cl.n_negative_samples,
        "gamma": cl.gamma,
    }


def stage_cluster(ctx: StageContext) -> None:
    ext_file = _require(ctx.dir("extract") / "extractions.jsonl",
                        "extractions", "extract")
    vec_files = [_require(ctx.dir("embed") / f"{side}.vec",
                          f"{side} vectors", "embed") for side in SIDES]
    if not ctx.plan("cluster", [ext_file] + vec_files):
        return
    extractions = ExtractionSet.load(ext_file)
    client = ctx.gen_client()
    cl = ctx.config.clustering
    out = ctx.dir("cluster")
    out.mkdir(parents=True, exist_ok=True)
    for side in SIDES:
        vectors = ctx.load_vectors(side)
        proj = project_2d(vectors, params=_projection_params(ctx),
                          seed=ctx.config.seed)
        labels = cluster_hdbscan(proj, min_cluster_size=cl.min_cluster_size,
                                 min_samples=cl.min_samples,
                                 allow_single_cluster=cl.allow_single_cluster)
        model = build_cluster_model(
            side, extractions, vectors, proj, labels, client,
            top_k=cl.top_terms, n_samples=cl.summary_samples,
            prompt_version=ctx.config.prompt_version)
        radius = cl.adjacency_fraction * proj.bounding_box_diagonal()
        model = merge_adjacent_same_label(model, proj, radius, vectors=vectors)
        recompute_top_terms(model, extractions, k=cl.top_terms)
        proj.save(out / f"projection_{side}.tsv")
        save_cluster_model(model, out)
        atomic_write_text(out / f"flags_{side}.txt",
                          "".join(f"{f}\n" for f in model.flags) or "")
        click.echo(f"cluster[{side}]: {model.n_clusters()} clusters, "
                   f"{model.n_noise()} noise points")
    ctx.write_meta("cluster", [ext_file] + vec_files)


def _cluster_counts(model, extractions) -> tuple[dict, dict]:
    totals: dict[int, int] = {}
    ai: dict[int, int] = {}
    for pub_id, cluster in model.assignments.items():
        if cluster < 0:
            continue
        totals[cluster] = totals.get(cluster, 0) + 1
        ext = extractions.get(pub_id)
        if ext is not None and ext.ai4science:
            ai[cluster] = ai.get(cluster, 0) + 1
    for cluster in model.labels:
        totals.setdefault(cluster, 0)
    return totals, ai


def stage_atlas(ctx: StageContext) -> None:
    ext_file = _require(ctx.dir("extract") / "extractions.jsonl",
                        "extractions", "extract")
    cluster_files = [ctx.dir("cluster") / f"assignments_{side}.tsv"
                     for side in SIDES]
    for side, path in zip(SIDES, cluster_files):
        _require(path, f"{side} cluster assignments", "cluster")
    inputs = [ext_file] + cluster_files
    if not ctx.plan("atlas", inputs):
        return
    extractions = ExtractionSet.load(ext_file)
    corpus = ctx.load_corpus()
    problem_model, method_model = ctx.load_cluster_models()
    out = ctx.dir("atlas")
    out.mkdir(parents=True, exist_ok=True)

    graph, report = build_bipartite(extractions, problem_model, method_model)
    export_graph(graph, ctx.config.atlas.min_edge_weight, out,
                 problem_labels=problem_model.labels,
                 method_labels=method_model.labels,
                 graphml=ctx.config.atlas.write_graphml)
    atomic_write_text(out / "graph_report.txt", report.to_text())

    degrees = {}
    lognormal = {}
    for side in SIDES:
        per_side = {}
        for weighted in (False, True):
            stats = degree_stats(graph, side, weighted=weighted)
            key = "weighted" if weighted else "unweighted"
            per_side[key] = {
                "degrees": {str(n): int(d) for n, d in sorted(stats.degrees.items())},
                "mean": stats.mean,
            }
        degrees[side] = per_side
        values = np.array([d for d in per_side["unweighted"]["degrees"].values()],
                          dtype=np.float64)
        try:
            fit = fit_lognormal(values)
            lognormal[side] = {"mu": fit.mu, "sigma": fit.sigma,
                               "goodness": fit.goodness, "n_used": fit.n_used,
                               "n_filtered": fit.n_filtered}
        except AtlasError as exc:
            lognormal[side] = {"error": str(exc)}
    atomic_write_text(out / "degrees.json",
                      json.dumps(degrees, indent=2, sort_keys=True) + "\n")
    atomic_write_text(out / "lognormal.json",
                      json.dumps(lognormal, indent=2, sort_keys=True) + "\n")

    for side, model in (("problem", problem_model), ("method", method_model)):
        totals, ai = _cluster_counts(model, extractions)
        partition = partition_investigation(
            totals, ai, side=side,
            through_origin=ctx.config.atlas.through_origin)
        atomic_write_text(out / f"partition_{side}.tsv",
                          partition_table(partition, model.labels, totals, ai))
        payload = {
            "side": side,
            "slope": partition.slope,
            "intercept": partition.intercept,
            "through_origin": partition.through_origin,
            "well": sorted(int(c) for c in partition.well),
            "under": sorted(int(c) for c in partition.under),
            "excluded": sorted(int(c) for c in partition.excluded),
            "totals": {str(c): int(v) for c, v in sorted(totals.items())},
            "ai_counts": {str(c): int(ai.get(c, 0)) for c in sorted(totals)},
            "labels": {str(c): model.labels[c] for c in sorted(model.labels)},
        }
        atomic_write_text(out / f"partition_{side}.json",
                          json.dumps(payload, indent=2, sort_keys=True) + "\n")

    breakdown = community_breakdown(corpus, extractions, problem_model,
                                    method_model)
    atomic_write_text(out / "communities.json",
                      json.dumps(breakdown, indent=2, sort_keys=True) + "\n")
    ctx.write_meta("atlas", inputs)
    click.echo(f"atlas: {len(graph.edges)} edges, "
               f"{len(report.skipped)} records skipped")


def _subset_vectors(vectors: AspectVectors, keep_ids: set) -> AspectVectors:
    idx = [i for i, pub_id in enumerate(vectors.ids) if pub_id in keep_ids]
    return AspectVectors(ids=[vectors.ids[i] for i in idx],
                         matrix=vectors.matrix[idx],
                         instruction_id=vectors.instruction_id,
                         provider_id=vectors.provider_id)


def _reference_text(ext, direction: str) -> str | None:
    keyphrase = (ext.method_keyphrase if direction == SCI_TO_AI
                 else ext.problem_keyphrase)
    if not keyphrase:
        return None
    return f"{keyphrase}, {ext.usage}" if ext.usage else keyphrase


def _rank_items(targets_scores: list, texts: list | None = None) -> list:
    items = []
    for rank, (target, score) in enumerate(targets_scores, start=1):
        text = texts[rank - 1] if texts else None
        items.append(PredictionItem(rank=rank, target=str(target),
                                    score=float(score), raw_text=text))
    return items


def stage_predict(ctx: StageContext) -> None:
    ext_file = _require(ctx.dir("extract") / "extractions.jsonl",
                        "extractions", "extract")
    cluster_files = [ctx.dir("cluster") / f"assignments_{side}.tsv"
                     for side in SIDES]
    for side, path in zip(SIDES, cluster_files):
        _require(path, f"{side} cluster assignments", "cluster")
    vec_files = [_require(ctx.dir("embed") / f"{side}.vec",
                          f"{side} vectors", "embed") for side in SIDES]
    corpus_file = _require(ctx.dir("ingest") / "corpus.jsonl", "corpus", "ingest")
    inputs = [ext_file, corpus_file] + cluster_files + vec_files
    if not ctx.plan("predict", inputs):
        return

    config = ctx.config
    extractions = ExtractionSet.load(ext_file)
    corpus = ctx.load_corpus()
    problem_model, method_model = ctx.load_cluster_models()
    models = {"problem": problem_model, "method": method_model}
    vectors = {side: ctx.load_vectors(side) for side in SIDES}
    client = ctx.gen_client()
    provider = ctx.embed_provider()
    split = split_by_year(corpus, config.split_year)

    def linked(ext) -> tuple[int, int] | None:
        if not ext.ai4science:
            return None
        p = problem_model.assignments.get(ext.pub_id, -1)
        m = method_model.assignments.get(ext.pub_id, -1)
        if p < 0 or m < 0:
            return None
        return p, m

    train_exts = ExtractionSet([e for e in extractions if e.pub_id in split.train])
    train_graph, _ = build_bipartite(train_exts, problem_model, method_model)
    train_links = sorted({(p, m) for p, m, _ in train_graph.edges})

    test_records = []  # (pub_id, problem cluster, method cluster)
    for ext in extractions:
        if ext.pub_id in split.test:
            pair = linked(ext)
            if pair is not None:
                test_records.append((ext.pub_id, pair[0], pair[1]))

    k_max = max(max(config.predict.k_list), max(config.eval.k_list),
                config.eval.novel_k)
    out = ctx.dir("predict")
    out.mkdir(parents=True, exist_ok=True)

    n2v = train_node2vec(train_graph, params=config.predict.node2vec_params(),
                         seed=config.seed)
    katz = katz_scores(train_graph, alpha=config.predict.katz_alpha,
                       max_len=config.predict.katz_max_len,
                       weighted=config.predict.weighted)

    all_flags: dict[str, list] = {}
    for direction in DIRECTIONS:
        source_side = "problem" if direction == SCI_TO_AI else "method"
        target_side = "method" if direction == SCI_TO_AI else "problem"
        target_model = models[target_side]

        # Cluster-level truth keeps only links absent from the training
        # graph: the graph predictors rank new partners (train partners
        # are excluded from their candidates), so a test link that also
        # occurs in train would be unreachable by construction.
        # Publication-level truth keeps every test pair: the generation
        # baselines answer "which cluster fits this paper", not "which
        # link is new".
        cluster_truth: dict[str, list] = {}
        pub_truth: dict[str, list] = {}
        source_cluster: dict[str, int] = {}
        for pub_id, p, m in test_records:
            src, tgt = (p, m) if direction == SCI_TO_AI else (m, p)
            pub_truth[pub_id] = [str(tgt)]
            source_cluster[pub_id] = src
            if tgt not in train_graph.neighbors(source_side, src):
                cluster_truth.setdefault(str(src), []).append(str(tgt))
        cluster_truth = {s: sorted(set(t)) for s, t in cluster_truth.items()}
        sources = sorted(cluster_truth, key=int)
        flags: list[str] = []

        def graph_exclude(node: int) -> set:
            return set(train_graph.neighbors(source_side, node))

        katz_run = PredictionRun(
            direction=direction, method="katz", seed=config.seed,
            params={"alpha": config.predict.katz_alpha,
                    "max_len": config.predict.katz_max_len,
                    "weighted": config.predict.weighted, "k": k_max})
        n2v_run = PredictionRun(direction=direction, method="node2vec",
                                seed=config.seed,
                                params=dict(config.predict.node2vec_params(),
                                            k=k_max))
        graph_run = PredictionRun(direction=direction, method="llm_graph",
                                  seed=config.seed,
                                  params={"k": k_max, "model": client.model_id})
        graph_texts: dict[str, list] = {}
        for src_str in sources:
            node = int(src_str)
            exclude = graph_exclude(node)
            ranked = predict_katz(train_graph, (source_side, node), k_max,
                                  alpha=config.predict.katz_alpha,
                                  max_len=config.predict.katz_max_len,
                                  weighted=config.predict.weighted,
                                  exclude=exclude, scores=katz)
            katz_run.add(src_str, _rank_items(ranked))
            ranked = predict_node2vec(n2v, (source_side, node), k_max,
                                      exclude=exclude)
            n2v_run.add(src_str, _rank_items(ranked))
            try:
                cluster_ids, gflags = predict_llm_graph(
                    client, train_graph, problem_model, method_model,
                    (source_side, node), k_max, direction,
                    provider=provider,
                    prompt_version=config.prompt_version)
            except LinkPredError as exc:
                flags.append(f"llm_graph source {src_str}: {exc}")
                continue
            flags.extend(f"llm_graph source {src_str}: {f}" for f in gflags)
            scored = [(cid, float(k_max - i)) for i, cid in enumerate(cluster_ids)]
            labels = [target_model.labels.get(cid, str(cid)) for cid in cluster_ids]
            graph_run.add(src_str, _rank_items(scored, texts=labels))
            graph_texts[src_str] = labels

        train_ai4sci = {e.pub_id for e in train_exts if e.ai4science}
        retrieval_pool = _subset_vectors(vectors[source_side], train_ai4sci)
        rag_run = PredictionRun(direction=direction, method="llm_rag",
                                seed=config.seed,
                                params={"k": k_max,
                                        "n_exemplars": config.predict.n_exemplars,
                                        "model": client.model_id})
        imit_run = PredictionRun(direction=direction, method="imitation",
                                 seed=config.seed, params={"k": k_max})
        rag_texts: dict[str, list] = {}
        imit_texts: dict[str, list] = {}
        query_vectors = vectors[source_side]
        for pub_id in sorted(pub_truth):
            if pub_id not in query_vectors.ids:
                flags.append(f"llm_rag query {pub_id}: no {source_side} vector")
                continue
            qvec = query_vectors.row(pub_id)
            exemplar_ids = [pid for pid, _ in retrieve_similar(
                retrieval_pool, qvec, config.predict.n_exemplars)]
            exemplars = [extractions[pid] for pid in exemplar_ids]
            generations, rflags = generate_links_rag(
                client, extractions[pub_id], exemplars, k_max, direction,
                prompt_version=config.prompt_version)
            flags.extend(f"llm_rag query {pub_id}: {f}" for f in rflags)
            rag_texts[pub_id] = [g.text() for g in generations]
            mapped: list[tuple[int, float]] = []
            seen: set[int] = set()
            for i, gen in enumerate(generations):
                try:
                    cid = map_generation_to_cluster(gen.text(), target_model,
                                                    provider)
                except LinkPredError as exc:
                    flags.append(f"llm_rag query {pub_id} sample {i}: {exc}")
                    continue
                if cid not in seen:
                    seen.add(cid)
                    mapped.append((cid, float(k_max - i)))
            rag_run.add(pub_id, _rank_items(
                mapped, texts=[target_model.labels.get(c, str(c))
                               for c, _ in mapped]))

            imits = imitation_baseline(qvec, retrieval_pool, extractions,
                                       k_max, direction,
                                       opposite_model=target_model)
            imit_texts[pub_id] = [p.text for p in imits]
            mapped = []
            seen = set()
            for i, pred in enumerate(imits):
                if pred.cluster_id is None or pred.cluster_id in seen:
                    continue
                seen.add(pred.cluster_id)
                mapped.append((pred.cluster_id, float(k_max - i)))
            imit_run.add(pub_id, _rank_items(
                mapped, texts=[target_model.labels.get(c, str(c))
                               for c, _ in mapped]))

        for run in (katz_run, n2v_run, graph_run, rag_run, imit_run):
            run.save(out / f"{run.method}_{direction}.tsv")
        for method, texts in (("llm_rag", rag_texts), ("imitation", imit_texts),
                              ("llm_graph", graph_texts)):
            atomic_write_text(out / f"texts_{method}_{direction}.json",
                              json.dumps(texts, indent=2, sort_keys=True) + "\n")

        references = {}
        for pub_id in sorted(pub_truth):
            text = _reference_text(extractions[pub_id], direction)
            if text:
                references[pub_id] = text
        atomic_write_text(out / f"truth_cluster_{direction}.json",
                          json.dumps(cluster_truth, indent=2, sort_keys=True) + "\n")
        atomic_write_text(out / f"truth_pub_{direction}.json",
                          json.dumps(pub_truth, indent=2, sort_keys=True) + "\n")
        atomic_write_text(out / f"references_{direction}.json",
                          json.dumps(references, indent=2, sort_keys=True) + "\n")
        atomic_write_text(out / f"source_cluster_{direction}.json",
                          json.dumps(source_cluster, indent=2, sort_keys=True) + "\n")
        all_flags[direction] = flags
        click.echo(f"predict[{direction}]: {len(sources)} cluster sources, "
                   f"{len(pub_truth)} test queries, {len(flags)} flags")

    atomic_write_text(out / "reference_links.json",
                      json.dumps([[p, m] for p, m in train_links]) + "\n")
    atomic_write_text(out / "flags.json",
                      json.dumps(all_flags, indent=2, sort_keys=True) + "\n")
    ctx.write_meta("predict", inputs)


def _load_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def stage_eval(ctx: StageContext) -> None:
    pred_dir = ctx.dir("predict")
    run_files = []
    for direction in DIRECTIONS:
        for method in RANK_METHODS:
            run_files.append(_require(pred_dir / f"{method}_{direction}.tsv",
                                      f"{method} {direction} predictions",
                                      "predict"))
    part_files = [_require(ctx.dir("atlas") / f"partition_{side}.json",
                           f"{side} partition", "atlas") for side in SIDES]
    inputs = run_files + part_files
    if not ctx.plan("eval", inputs):
        return
    config = ctx.config
    provider = ctx.embed_provider()
    out = ctx.dir("eval")
    out.mkdir(parents=True, exist_ok=True)

    partitions = {}
    for side, path in zip(SIDES, part_files):
        data = _load_json(path)
        partitions[side] = {"well": set(data["well"]), "under": set(data["under"])}

    metric_rows = []
    novel: dict[str, dict] = {}
    reference_links = {tuple(pair) for pair in
                       _load_json(pred_dir / "reference_links.json")}
    for direction in DIRECTIONS:
        source_side = "problem" if direction == SCI_TO_AI else "method"
        target_side = "method" if direction == SCI_TO_AI else "problem"
        cluster_truth = {s: list(t) for s, t in
                         _load_json(pred_dir / f"truth_cluster_{direction}.json").items()}
        pub_truth = {s: list(t) for s, t in
                     _load_json(pred_dir / f"truth_pub_{direction}.json").items()}
        source_cluster = _load_json(pred_dir / f"source_cluster_{direction}.json")
        class_sets = partitions[source_side]

        def source_class(source: str, granularity: str) -> str:
            cluster = (int(source) if granularity == "cluster"
                       else source_cluster.get(source, -1))
            if cluster in class_sets["well"]:
                return "well"
            if cluster in class_sets["under"]:
                return "under"
            return "excluded"

        ref = (reference_links if direction == SCI_TO_AI
               else {(m, p) for p, m in reference_links})
        novel[direction] = {}
        for method in RANK_METHODS:
            run = PredictionRun.load(pred_dir / f"{method}_{direction}.tsv")
            granularity = ("cluster" if method in ("katz", "node2vec", "llm_graph")
                           else "publication")
            truth = cluster_truth if granularity == "cluster" else pub_truth
            predictions = {s: [item.target for item in items]
                           for s, items in run.predictions.items()}
            for partition in ("all", "well", "under"):
                if partition == "all":
                    part_truth = truth
                else:
                    part_truth = {s: t for s, t in truth.items()
                                  if source_class(s, granularity) == partition}
                for k in config.eval.k_list:
                    report = precision_recall_f1_at_k(predictions, part_truth, k)
                    metric_rows.append({
                        "direction": direction, "method": method,
                        "granularity": granularity, "partition": partition,
                        "k": k, "precision": report.precision,
                        "recall": report.recall, "f1": report.f1,
                        "n_sources": report.n_sources,
                        "n_excluded_empty_truth": report.n_excluded_empty_truth,
                        "n_missing_predictions": report.n_missing_predictions,
                    })
            pair_preds: dict[int, list] = {}
            for s in sorted(predictions):
                cluster = (int(s) if granularity == "cluster"
                           else source_cluster.get(s))
                if cluster is None:
                    continue
                merged = pair_preds.setdefault(int(cluster), [])
                for t in predictions[s][:config.eval.novel_k]:
                    if int(t) not in merged:
                        merged.append(int(t))
            novel[direction][method] = count_novel_links(
                pair_preds, set(ref), config.eval.novel_k)

        references = _load_json(pred_dir / f"references_{direction}.json")
        texts = {}
        for method in TEXT_METHODS:
            texts[method] = _load_json(pred_dir / f"texts_{method}_{direction}.json")
        scorers = {}
        for name in config.eval.text_scorers:
            if name == "rouge1":
                scorers["rouge1"] = rouge1_f
            elif name == "cosine":
                scorers["cosine"] = CosineScorer(provider, side=target_side)
            else:
                scorers[name] = None
        text_blocks = []
        text_json = []
        for partition in ("all", "well", "under"):
            if partition == "all":
                part_refs = dict(references)
            else:
                part_refs = {q: r for q, r in references.items()
                             if source_class(q, "publication") == partition}
            part_runs = {}
            for method in TEXT_METHODS:
                if method == "llm_graph":
                    continue  # cluster-level texts have no per-query references
                part_runs[method] = {q: texts[method].get(q, []) for q in part_refs}
            report = text_gen_report(part_runs, part_refs, scorers,
                                     ks=list(config.eval.k_list),
                                     direction=direction, partition=partition)
            text_blocks.append(report.to_text())
            text_json.append(json.loads(report.to_json()))
        atomic_write_text(out / f"textgen_{direction}.txt",
                          "\n".join(text_blocks) + "\n")
        atomic_write_text(out / f"textgen_{direction}.json",
                          json.dumps(text_json, indent=2, sort_keys=True) + "\n")

    header = ["direction", "method", "granularity", "partition", "k",
              "precision", "recall", "f1", "n_sources",
              "n_excluded_empty_truth", "n_missing_predictions"]
    lines = ["\t".join(header)]
    for row in metric_rows:
        lines.append("\t".join(
            repr(row[c]) if isinstance(row[c], float) else str(row[c])
            for c in header))
    atomic_write_text(out / "metrics.tsv", "\n".join(lines) + "\n")
    atomic_write_text(out / "metrics.json",
                      json.dumps(metric_rows, indent=2, sort_keys=True) + "\n")
    atomic_write_text(out / "novel_links.json",
                      json.dumps({"k": config.eval.novel_k,
                                  "reference": "train_links",
                                  "counts": novel},
                                 indent=2, sort_keys=True) + "\n")
    ctx.write_meta("eval", inputs)
    click.echo(f"eval: {len(metric_rows)} metric rows, novel links at "
               f"K={config.eval.novel_k}: "
               + ", ".join(f"{d}/{m}={novel[d][m]}"
                           for d in novel for m in novel[d]))


def stage_plot(ctx: StageContext) -> None:
    ext_file = _require(ctx.dir("extract") / "extractions.jsonl",
                        "extractions", "extract")
    proj_file = _require(ctx.dir("cluster") / "projection_problem.tsv",
                         "problem projection", "cluster")
    degree_file = _require(ctx.dir("atlas") / "degrees.json",
                           "degree stats", "atlas")
    lognormal_file = _require(ctx.dir("atlas") / "lognormal.json",
                              "log-normal fits", "atlas")
    part_files = [_require(ctx.dir("atlas") / f"partition_{side}.json",
                           f"{side} partition", "atlas") for side in SIDES]
    inputs = [ext_file, proj_file, degree_file, lognormal_file] + part_files
    if not ctx.plan("plot", inputs):
        return
    from .atlas import LogNormalFit

    config = ctx.config
    out = ctx.dir("plot")
    out.mkdir(parents=True, exist_ok=True)
    extractions = ExtractionSet.load(ext_file)

    proj = Projection2D.load(proj_file)
    categories = {ext.pub_id: categorize(ext) for ext in extractions}
    plot_map(proj, categories, out / "map.svg", seed=config.seed,
             stamp=ctx.stamp("plot"), title="problem map")

    degrees = _load_json(degree_file)
    lognormal = _load_json(lognormal_file)
    panels = []
    for side in SIDES:
        values = list(degrees[side]["unweighted"]["degrees"].values())
        fit_raw = lognormal.get(side, {})
        fit = LogNormalFit(**fit_raw) if "mu" in fit_raw else None
        panels.append((f"{side} cluster degrees", values, fit))
    plot_degree_hist(panels, out / "degree_hist.svg", seed=config.seed,
                     stamp=ctx.stamp("plot"))

    for side, path in zip(SIDES, part_files):
        data = _load_json(path)
        totals = {int(c): v for c, v in data["totals"].items()}
        ai = {int(c): v for c, v in data["ai_counts"].items()}
        partition = partition_investigation(
            totals, ai, side=side, through_origin=data["through_origin"])
        labels = {int(c): l for c, l in data["labels"].items()}
        plot_cluster_scatter(partition, totals, ai,
                             out / f"cluster_scatter_{side}.svg",
                             seed=config.seed, stamp=ctx.stamp("plot"),
                             labels=labels, title=f"{side} clusters")
    ctx.write_meta("plot", inputs)
    click.echo("plot: map.svg, degree_hist.svg, cluster_scatter_*.svg")


# ---------------------------------------------------------------------
# command definitions


def _resolve_config(root: Path, config_path, seed, backend, k_list) -> ProjectConfig:
    if config_path:
        config = load_config(config_path)
    elif (Path(root) / "config.json").exists():
        config = load_config(Path(root) / "config.json")
    else:
        config = ProjectConfig()
    overrides = config.to_dict()
    changed = False
    if seed is not None:
        overrides["seed"] = seed
        changed = True
    if backend is not None:
        overrides["gen"]["kind"] = backend
        changed = True
    if k_list is not None:
        ks = sorted({int(part) for part in k_list.split(",") if part.strip()})
        if not ks:
            raise ConfigError("--k needs at least one integer")
        overrides["predict"]["k_list"] = ks
        overrides["eval"]["k_list"] = ks
        changed = True
    if changed:
        config = config_from_dict(overrides)
    return config


_shared_options = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="Config JSON (default: PROJECT/config.json if present)."),
    click.option("--seed", type=int, default=None, help="Override config seed."),
    click.option("--deterministic", is_flag=True,
                 help="Single-threaded, fully seeded run."),
    click.option("--backend", type=click.Choice(["mock", "remote", "cache"]),
                 default=None, help="Override the generation backend."),
    click.option("--force", is_flag=True,
                 help="Redo stages even when artifacts look fresh."),
    click.option("--k", "k_list", default=None,
                 help="Comma-separated K values for predict/eval."),
]


def shared_options(command):
    for option in reversed(_shared_options):
        command = option(command)
    return command


def _make_context(project, config_path, seed, deterministic, backend, force,
                  k_list) -> StageContext:
    root = Path(project)
    config = _resolve_config(root, config_path, seed, backend, k_list)
    ctx = StageContext(root, config, deterministic=deterministic, force=force)
    root.mkdir(parents=True, exist_ok=True)
    save_config(config, root / "config.resolved.json")
    return ctx


@click.group()
def cli():
    """Build an atlas of scientific problems and AI methods from abstracts."""


def _stage_command(name, stage_fn, extra_params=()):
    @click.argument("project", type=click.Path())
    @shared_options
    def command(project, config_path, seed, deterministic, backend, force,
                k_list, **kwargs):
        ctx = _make_context(project, config_path, seed, deterministic,
                            backend, force, k_list)
        with project_lock(ctx.root):
            stage_fn(ctx, **kwargs)

    command.__name__ = name
    for param in extra_params:
        command = param(command)
    return cli.command(name=name)(command)


ingest_cmd = _stage_command(
    "ingest", lambda ctx, input, venues: stage_ingest(ctx, input, venues),
    extra_params=[
        click.option("--input", required=True, type=click.Path(exists=True),
                     help="Corpus JSONL to ingest."),
        click.option("--venues", default=None, type=click.Path(),
                     help="Venue map JSON (default: sibling venue_map.json)."),
    ])
extract_cmd = _stage_command("extract", stage_extract)
embed_cmd = _stage_command("embed", stage_embed)
cluster_cmd = _stage_command("cluster", stage_cluster)
atlas_cmd = _stage_command("atlas", stage_atlas)
predict_cmd = _stage_command("predict", stage_predict)
eval_cmd = _stage_command("eval", stage_eval)
plot_cmd = _stage_command("plot", stage_plot)


@cli.command(name="pipeline")
@click.argument("project", type=click.Path())
@click.option("--input", "input_path", default=None, type=click.Path(),
              help="Corpus JSONL (omit when the project already has one).")
@click.option("--venues", default=None, type=click.Path(),
              help="Venue map JSON (default: sibling venue_map.json).")
@shared_options
def pipeline_cmd(project, input_path, venues, config_path, seed, deterministic,
                 backend, force, k_list):
    """Run every stage in order."""
    ctx = _make_context(project, config_path, seed, deterministic, backend,
                        force, k_list)
    with project_lock(ctx.root):
        t0 = time.time()
        if input_path is not None:
            stage_ingest(ctx, Path(input_path), Path(venues) if venues else None)
        elif not (ctx.dir("ingest") / "corpus.jsonl").exists():
            raise ProjectError(
                "project has no corpus; pass --input to `pipeline` or run "
                "`sciatlas ingest` first")
        stage_extract(ctx)
        stage_embed(ctx)
        stage_cluster(ctx)
        stage_atlas(ctx)
        stage_predict(ctx)
        stage_eval(ctx)
        stage_plot(ctx)
        click.echo(f"pipeline: done in {time.time() - t0:.1f}s "
                   f"(config {ctx.config_hash})")


_DATA_ERRORS = (ProjectError, ConfigError, CorpusError, ExtractionError,
                ClusterError, ClusterModelError, ProjectionError, AtlasError,
                Node2VecError, LinkPredError, EvalError, PlotError)
_BACKEND_ERRORS = (GenError, BatchError, EmbeddingError)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="sciatlas", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except _BACKEND_ERRORS as exc:
        click.echo(f"backend error: {exc}", err=True)
        return 3
    except _DATA_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
