"""Link prediction between problem clusters and method clusters.

Five predictors over the bipartite graph:

* Katz index - truncated path-counting score with length penalty alpha;
* node2vec  - cosine ranking of walk-trained node embeddings;
* LLM+RAG   - generate (keyphrase, usage) texts from a prompt carrying
              retrieved exemplar papers, then map them onto clusters by
              centroid similarity;
* LLM+Graph - put the whole training link list in the prompt and ask
              for K cluster labels directly;
* imitation - copy the opposite-side texts of the K nearest training
              records (a non-generative floor for the text metrics).
"""

from __future__ import annotations

import ast
import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._util import atomic_write_text, tokenize
from .atlas import METHOD_SIDE, PROBLEM_SIDE, BipartiteGraph
from .clusters import ClusterModel
from .embedding import INSTRUCTIONS, AspectVectors, EmbeddingProvider
from .extraction import (AspectExtraction, ExtractionSet, GenClient, GenError,
                         load_prompt, render_prompt)
from .node2vec import Node2Vec

SCI_TO_AI = "sci_to_ai"
AI_TO_SCI = "ai_to_sci"
DIRECTIONS = (SCI_TO_AI, AI_TO_SCI)

DEFAULT_KATZ_ALPHA = 0.1
DEFAULT_KATZ_MAX_LEN = 6

NODE2VEC_DEFAULTS = {
    "dim": 128,
    "walks_per_node": 10,
    "walk_length": 80,
    "window": 10,
    "n_negative": 5,
    "p": 1.0,
    "q": 1.0,
    "epochs": 5,
}


class LinkPredError(Exception):
    """Prediction preconditions violated or output unusable."""


def node_key(side: str, cluster_id: int) -> str:
    return ("P" if side == PROBLEM_SIDE else "M") + str(cluster_id)


def parse_node_key(key: str) -> tuple[str, int]:
    side = PROBLEM_SIDE if key.startswith("P") else METHOD_SIDE
    return side, int(key[1:])


def source_side(direction: str) -> str:
    if direction == SCI_TO_AI:
        return PROBLEM_SIDE
    if direction == AI_TO_SCI:
        return METHOD_SIDE
    raise ValueError(f"bad direction {direction!r}")


def target_side(direction: str) -> str:
    return METHOD_SIDE if direction == SCI_TO_AI else PROBLEM_SIDE


@dataclass
class KatzScores:
    """Dense truncated Katz table over the combined node set."""

    problems: list
    methods: list
    matrix: np.ndarray
    alpha: float
    max_len: int

    def _index(self, side: str, node: int) -> int:
        if side == PROBLEM_SIDE:
            return self.problems.index(node)
        return len(self.problems) + self.methods.index(node)

    def score(self, side_a: str, a: int, side_b: str, b: int) -> float:
        return float(self.matrix[self._index(side_a, a), self._index(side_b, b)])

    def cross(self, problem: int, method: int) -> float:
        return self.score(PROBLEM_SIDE, problem, METHOD_SIDE, method)


def katz_scores(graph: BipartiteGraph, alpha: float = DEFAULT_KATZ_ALPHA,
                max_len: int = DEFAULT_KATZ_MAX_LEN,
                weighted: bool = False) -> KatzScores:
    """Katz(x, y) = sum over path lengths l = 1..max_len of alpha^l (A^l)_xy.

    A is the (by default unweighted) bipartite adjacency. Since the
    graph is bipartite, cross-side entries accumulate from odd l only.
    Convergence of the untruncated series needs alpha < 1/rho(A); rho is
    bounded by sqrt(max problem row sum * max method row sum), and a
    warning fires when alpha reaches it.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    problems = sorted(graph.problem_nodes)
    methods = sorted(graph.method_nodes)
    n = len(problems) + len(methods)
    if n == 0:
        raise LinkPredError("graph has no nodes")
    p_index = {p: i for i, p in enumerate(problems)}
    m_index = {m: len(problems) + i for i, m in enumerate(methods)}
    adjacency = np.zeros((n, n), dtype=np.float64)
    for (p, m), w in graph.pair_weights().items():
        value = float(w) if weighted else 1.0
        adjacency[p_index[p], m_index[m]] = value
        adjacency[m_index[m], p_index[p]] = value

    row_sums = adjacency.sum(axis=1)
    max_p = row_sums[:len(problems)].max() if problems else 0.0
    max_m = row_sums[len(problems):].max() if methods else 0.0
    bound = float(np.sqrt(max_p * max_m))
    if bound > 0 and alpha >= 1.0 / bound:
        warnings.warn(
            f"alpha = {alpha} >= 1/{bound:.3f}, the spectral-radius bound: "
            "the untruncated series would diverge", stacklevel=2)

    total = np.zeros_like(adjacency)
    power = np.eye(n)
    for length in range(1, max_len + 1):
        power = power @ adjacency
        total += alpha**length * power
    return KatzScores(problems=problems, methods=methods, matrix=total,
                      alpha=alpha, max_len=max_len)


def predict_katz(
    graph: BipartiteGraph,
    source: tuple,
    K: int,
    alpha: float = DEFAULT_KATZ_ALPHA,
    max_len: int = DEFAULT_KATZ_MAX_LEN,
    weighted: bool = False,
    exclude: set | None = None,
    scores: KatzScores | None = None,
) -> list[tuple[int, float]]:
    """Top-K opposite-side nodes by Katz score.

    Ties break toward the pair with the higher existing edge weight,
    then the lower node id. Existing neighbors stay eligible unless
    explicitly excluded.
    """
    side, node = source
    if node not in graph.nodes(side):
        raise LinkPredError(f"unknown source {source!r}")
    if scores is None:
        scores = katz_scores(graph, alpha=alpha, max_len=max_len, weighted=weighted)
    opposite = METHOD_SIDE if side == PROBLEM_SIDE else PROBLEM_SIDE
    exclude = exclude or set()
    weights = graph.pair_weights()
    ranked = []
    for target in sorted(graph.nodes(opposite)):
        if target in exclude:
            continue
        pair = (node, target) if side == PROBLEM_SIDE else (target, node)
        ranked.append((
            -scores.score(side, node, opposite, target),
            -weights.get(pair, 0),
            target,
        ))
    ranked.sort()
    return [(t, -neg_score) for neg_score, _, t in ranked[:K]]


@dataclass
class NodeEmbeddings:
    """Trained vectors for every graph node, problems then methods."""

    problems: list
    methods: list
    matrix: np.ndarray
    params: dict
    isolated: list = field(default_factory=list)

    def __post_init__(self):
        if self.matrix.shape[0] != len(self.problems) + len(self.methods):
            raise LinkPredError("embedding matrix does not cover all nodes")
        if not np.all(np.isfinite(self.matrix)):
            raise LinkPredError("non-finite node embedding")

    def index(self, side: str, node: int) -> int:
        if side == PROBLEM_SIDE:
            return self.problems.index(node)
        return len(self.problems) + self.methods.index(node)

    def vector(self, side: str, node: int) -> np.ndarray:
        return self.matrix[self.index(side, node)]

    def has(self, side: str, node: int) -> bool:
        pool = self.problems if side == PROBLEM_SIDE else self.methods
        return node in pool


def train_node2vec(graph: BipartiteGraph, params: dict | None = None,
                   seed: int = 0, weighted: bool = False) -> NodeEmbeddings:
    """Embed the bipartite graph's nodes with biased-walk skip-gram."""
    problems = sorted(graph.problem_nodes)
    methods = sorted(graph.method_nodes)
    if not problems and not methods:
        raise LinkPredError("graph has no nodes")
    p_index = {p: i for i, p in enumerate(problems)}
    m_index = {m: len(problems) + i for i, m in enumerate(methods)}
    pair_weights = graph.pair_weights()
    edges = [(p_index[p], m_index[m]) for (p, m) in sorted(pair_weights)]
    edge_weights = [float(pair_weights[pair]) for pair in sorted(pair_weights)] \
        if weighted else None
    merged = dict(NODE2VEC_DEFAULTS)
    merged.update(params or {})
    model = Node2Vec(random_state=seed, **merged)
    model.fit(edges, n_nodes=len(problems) + len(methods), weights=edge_weights)
    index_to_key = {i: node_key(PROBLEM_SIDE, p) for p, i in p_index.items()}
    index_to_key.update({i: node_key(METHOD_SIDE, m) for m, i in m_index.items()})
    return NodeEmbeddings(
        problems=problems, methods=methods, matrix=model.embeddings_,
        params=dict(merged, seed=seed, weighted=weighted),
        isolated=[index_to_key[i] for i in model.isolated_],
    )


def predict_node2vec(embeds: NodeEmbeddings, source: tuple, K: int,
                     exclude: set | None = None) -> list[tuple[int, float]]:
    """Top-K opposite-side nodes by embedding cosine; ties by node id."""
    side, node = source
    if not embeds.has(side, node):
        raise LinkPredError(f"unknown source {source!r}")
    opposite_nodes = embeds.methods if side == PROBLEM_SIDE else embeds.problems
    query = embeds.vector(side, node)
    qn = np.linalg.norm(query)
    exclude = exclude or set()
    ranked = []
    for target in opposite_nodes:
        if target in exclude:
            continue
        vec = embeds.vector(METHOD_SIDE if side == PROBLEM_SIDE else PROBLEM_SIDE,
                            target)
        denom = qn * np.linalg.norm(vec)
        cos = float(np.dot(query, vec) / denom) if denom > 0 else 0.0
        ranked.append((-cos, target))
    ranked.sort()
    return [(t, -neg) for neg, t in ranked[:K]]


def retrieve_similar(train_vectors: AspectVectors, query_vector, n: int,
                     ) -> list[tuple[str, float]]:
    """Top-n training records by cosine to the query; ties by pub id."""
    if len(train_vectors) == 0:
        raise LinkPredError("empty training set")
    query = np.asarray(getattr(query_vector, "values", query_vector),
                       dtype=np.float64)
    matrix = train_vectors.matrix.astype(np.float64)
    norms = np.linalg.norm(matrix, axis=1) * np.linalg.norm(query)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(norms > 0, matrix @ query / norms, 0.0)
    ranked = sorted(zip(train_vectors.ids, sims), key=lambda t: (-t[1], t[0]))
    return [(pub_id, float(score)) for pub_id, score in ranked[:n]]


def format_exemplars(exemplars: list[AspectExtraction]) -> str:
    blocks = []
    for i, ext in enumerate(exemplars, start=1):
        blocks.append(
            f"Example {i}:\n"
            f"Problem (keyword/keyphrase): {ext.problem_keyphrase or 'N/A'}\n"
            f"Problem (definition): {ext.problem_definition or 'N/A'}\n"
            f"Problem discipline: {ext.problem_discipline or 'N/A'}\n"
            f"Method (keyword/keyphrase): {ext.method_keyphrase or 'N/A'}\n"
            f"Method (definition): {ext.method_definition or 'N/A'}\n"
            f"Usage: {ext.usage or 'N/A'}"
        )
    return "\n\n".join(blocks)


def _query_aspects_text(query: AspectExtraction, direction: str) -> str:
    if direction == SCI_TO_AI:
        return (f"Problem (keyword/keyphrase): {query.problem_keyphrase or 'N/A'}\n"
                f"Problem (definition): {query.problem_definition or 'N/A'}\n"
                f"Problem discipline: {query.problem_discipline or 'N/A'}")
    return (f"Method (keyword/keyphrase): {query.method_keyphrase or 'N/A'}\n"
            f"Method (definition): {query.method_definition or 'N/A'}")


@dataclass
class RagGeneration:
    keyphrase: str
    usage: str
    raw: str

    def text(self) -> str:
        return f"{self.keyphrase}, {self.usage}" if self.usage else self.keyphrase


def _parse_list(response: str):
    start = response.find("[")
    end = response.rfind("]")
    if start == -1 or end <= start:
        return None
    snippet = response[start:end + 1]
    for parser in (json.loads, ast.literal_eval):
        try:
            value = parser(snippet)
        except (ValueError, SyntaxError):
            continue
        if isinstance(value, list):
            return value
    return None


def generate_links_rag(
    client: GenClient,
    query: AspectExtraction,
    exemplars: list[AspectExtraction],
    K: int,
    direction: str,
    prompt_version: str = "v1",
) -> tuple[list[RagGeneration], list[str]]:
    """K independent single-recommendation generations.

    Each call gets a distinct tag so cached backends keep the samples
    separate. Unparseable or empty generations are dropped and flagged;
    fewer than K results are allowed.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"bad direction {direction!r}")
    task = "rag_sci_to_ai" if direction == SCI_TO_AI else "rag_ai_to_sci"
    template = load_prompt(task, prompt_version)
    prompt = render_prompt(template, {
        "Key Aspects Extraction": _query_aspects_text(query, direction),
        "examples": format_exemplars(exemplars),
    })
    key_name = ("ai method (keyword/keyphrase)" if direction == SCI_TO_AI
                else "scientific problem (keyword/keyphrase)")
    generations: list[RagGeneration] = []
    flags: list[str] = []
    for i in range(K):
        try:
            response = client.generate(prompt, model_id=client.model_id, tag=str(i))
        except GenError as exc:
            flags.append(f"sample {i}: generation failed: {exc}")
            continue
        parsed = _parse_list(response)
        entry = None
        if parsed:
            first = parsed[0]
            if isinstance(first, dict):
                folded = {str(k).strip().casefold(): v for k, v in first.items()}
                entry = folded
        if entry is None or key_name not in entry:
            flags.append(f"sample {i}: unparseable generation")
            continue
        keyphrase = str(entry.get(key_name, "")).strip()
        usage = str(entry.get("ai usage", "") or "").strip()
        if usage.upper() == "N/A":
            usage = ""
        if not keyphrase or keyphrase.upper() == "N/A":
            flags.append(f"sample {i}: empty recommendation")
            continue
        generations.append(RagGeneration(keyphrase=keyphrase, usage=usage,
                                         raw=response))
    return generations, flags


def map_generation_to_cluster(text: str, model: ClusterModel,
                              provider: EmbeddingProvider) -> int:
    """Cluster whose centroid is most cosine-similar to the embedded text;
    ties go to the lowest cluster id."""
    if not text or not tokenize(text):
        raise LinkPredError("cannot map empty text to a cluster")
    if not model.centroids:
        raise LinkPredError("cluster model has no centroids")
    vec = provider.embed(INSTRUCTIONS[model.side], text).astype(np.float64)
    qn = np.linalg.norm(vec)
    best_id = None
    best_score = -np.inf
    for cluster_id in sorted(model.centroids):
        centroid = np.asarray(model.centroids[cluster_id], dtype=np.float64)
        denom = qn * np.linalg.norm(centroid)
        score = float(np.dot(vec, centroid) / denom) if denom > 0 else -np.inf
        if score > best_score:
            best_score = score
            best_id = cluster_id
    if best_id is None:
        raise LinkPredError("no usable centroid")
    return best_id


def format_link_triples(graph: BipartiteGraph, problem_model: ClusterModel,
                        method_model: ClusterModel) -> str:
    """All training links as ("problem label", "method label", count)
    lines, aggregated per label pair, sorted."""
    totals: dict[tuple, int] = {}
    for (p, m), w in graph.pair_weights().items():
        pair = (problem_model.labels.get(p, f"cluster {p}"),
                method_model.labels.get(m, f"cluster {m}"))
        totals[pair] = totals.get(pair, 0) + w
    return "\n".join(f'("{u}", "{v}", {k})'
                     for (u, v), k in sorted(totals.items()))


def predict_llm_graph(
    client: GenClient,
    graph: BipartiteGraph,
    problem_model: ClusterModel,
    method_model: ClusterModel,
    source: tuple,
    K: int,
    direction: str,
    provider: EmbeddingProvider | None = None,
    prompt_version: str = "v1",
) -> tuple[list[int], list[str]]:
    """Ask for K target cluster labels given the whole training link list.

    Returned labels are resolved to cluster ids by exact (casefolded)
    label match, falling back to centroid cosine when an embedding
    provider is available; unresolvable labels are dropped with a flag.
    """
    side, node = source
    if side != source_side(direction):
        raise LinkPredError(f"source side {side!r} does not fit {direction!r}")
    source_model = problem_model if side == PROBLEM_SIDE else method_model
    target_model = method_model if side == PROBLEM_SIDE else problem_model
    if node not in source_model.labels:
        raise LinkPredError(f"unknown source {source!r}")

    task = "graph_sci_to_ai" if direction == SCI_TO_AI else "graph_ai_to_sci"
    template = load_prompt(task, prompt_version)
    triples = format_link_triples(graph, problem_model, method_model)
    target_labels = sorted(set(target_model.labels.values()))
    slots = {
        "example links": triples,
        "k": K,
    }
    if direction == SCI_TO_AI:
        slots["sci cluster"] = source_model.labels[node]
        slots["AI clusters"] = "\n".join(target_labels)
    else:
        slots["AI cluster"] = source_model.labels[node]
        slots["sci clusters"] = "\n".join(target_labels)
    prompt = render_prompt(template, slots)
    response = client.generate(prompt, model_id=client.model_id)
    parsed = _parse_list(response)
    if parsed is None:
        raise LinkPredError("unparseable label list from graph prompt")

    by_label: dict[str, int] = {}
    for cluster_id in sorted(target_model.labels):
        folded = target_model.labels[cluster_id].casefold()
        by_label.setdefault(folded, cluster_id)

    results: list[int] = []
    flags: list[str] = []
    for item in parsed:
        label = str(item).strip()
        if not label or label.upper() == "N/A":
            flags.append(f"empty label {item!r}")
            continue
        cluster_id = by_label.get(label.casefold())
        if cluster_id is None and provider is not None and tokenize(label):
            cluster_id = map_generation_to_cluster(label, target_model, provider)
        if cluster_id is None:
            flags.append(f"unmatched label {label!r}")
            continue
        if cluster_id not in results:
            results.append(cluster_id)
    return results[:K], flags


@dataclass
class ImitationPrediction:
    pub_id: str
    text: str
    cluster_id: int | None = None


def imitation_baseline(
    query_vector,
    train_vectors: AspectVectors,
    extractions: ExtractionSet,
    K: int,
    direction: str,
    opposite_model: ClusterModel | None = None,
) -> list[ImitationPrediction]:
    """Copy the opposite-side descriptions of the K nearest train records.

    The description is the record's own opposite keyphrase plus its
    usage sentence, the same composition generated predictions use.
    """
    nearest = retrieve_similar(train_vectors, query_vector, K)
    predictions = []
    for pub_id, _ in nearest:
        ext = extractions[pub_id]
        if direction == SCI_TO_AI:
            keyphrase = ext.method_keyphrase or ""
        else:
            keyphrase = ext.problem_keyphrase or ""
        text = f"{keyphrase}, {ext.usage}" if ext.usage else keyphrase
        cluster_id = None
        if opposite_model is not None:
            assigned = opposite_model.assignments.get(pub_id)
            if assigned is not None and assigned >= 0:
                cluster_id = assigned
        predictions.append(ImitationPrediction(pub_id=pub_id, text=text,
                                               cluster_id=cluster_id))
    return predictions


PREDICTIONS_FORMAT = "sciatlas-predictions"
PREDICTIONS_VERSION = 1


@dataclass
class PredictionItem:
    rank: int
    target: str
    score: float
    raw_text: str | None = None


@dataclass
class PredictionRun:
    """One predictor's ranked outputs for every source node."""

    direction: str
    method: str
    seed: int = 0
    params: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise LinkPredError(f"bad direction {self.direction!r}")
        for source, items in self.predictions.items():
            targets = [item.target for item in items]
            if len(targets) != len(set(targets)):
                raise LinkPredError(f"duplicate targets for source {source}")
            scores = [item.score for item in items]
            if any(a < b for a, b in zip(scores, scores[1:])):
                raise LinkPredError(f"scores increase down the list for {source}")

    def add(self, source: str, items: list[PredictionItem]) -> None:
        self.predictions[source] = items
        self.__post_init__()

    def save(self, path: str | Path) -> None:
        header = {
            "format": PREDICTIONS_FORMAT,
            "version": PREDICTIONS_VERSION,
            "direction": self.direction,
            "method": self.method,
            "seed": self.seed,
            "params": self.params,
        }
        lines = [json.dumps(header, sort_keys=True)]
        for source in sorted(self.predictions):
            for item in self.predictions[source]:
                raw = "" if item.raw_text is None else json.dumps(item.raw_text)
                lines.append(f"{self.direction}\t{self.method}\t{source}\t"
                             f"{item.rank}\t{item.target}\t{item.score!r}\t{raw}")
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PredictionRun":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines:
            raise LinkPredError(f"empty prediction file {path}")
        header = json.loads(lines[0])
        if header.get("format") != PREDICTIONS_FORMAT:
            raise LinkPredError(f"{path} is not a prediction file")
        run = cls(direction=header["direction"], method=header["method"],
                  seed=header.get("seed", 0), params=header.get("params", {}))
        by_source: dict[str, list[PredictionItem]] = {}
        for line in lines[1:]:
            if not line.strip():
                continue
            _, _, source, rank, target, score, raw = line.split("\t")
            by_source.setdefault(source, []).append(PredictionItem(
                rank=int(rank), target=target, score=float(score),
                raw_text=json.loads(raw) if raw else None))
        for source, items in by_source.items():
            items.sort(key=lambda item: item.rank)
            run.predictions[source] = items
        run.__post_init__()
        return run
