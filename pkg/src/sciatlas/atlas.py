"""Problem-method bipartite graph and its analyses.

Publications satisfying the AI4Science predicate become edges between
their problem cluster and method cluster. On top of the graph: degree
statistics, log-normal degree fits, a regression-based partition into
well/under-investigated clusters, per-community rankings, and a
plain-text / GraphML export.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from ._util import atomic_write_text
from .clusters import ClusterModel
from .corpus import Corpus
from .density import NOISE
from .extraction import ExtractionSet

PROBLEM_SIDE = "problem"
METHOD_SIDE = "method"


class AtlasError(Exception):
    """Graph construction or analysis precondition violated."""


@dataclass(frozen=True)
class BipartiteGraph:
    """Problem clusters and method clusters joined by publication edges.

    `edges` is a multiset: one (problem_cluster, method_cluster, pub_id)
    triple per AI4Science publication. weight(P, M) counts the distinct
    publications supporting the pair.
    """

    problem_nodes: frozenset
    method_nodes: frozenset
    edges: tuple

    def __post_init__(self):
        for p, m, _ in self.edges:
            if p not in self.problem_nodes or m not in self.method_nodes:
                raise AtlasError(f"edge ({p}, {m}) references unknown node")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def pair_weights(self) -> dict[tuple, int]:
        pubs_per_pair: dict[tuple, set] = defaultdict(set)
        for p, m, pub_id in self.edges:
            pubs_per_pair[(p, m)].add(pub_id)
        return {pair: len(pubs) for pair, pubs in pubs_per_pair.items()}

    def weight(self, problem: int, method: int) -> int:
        return self.pair_weights().get((problem, method), 0)

    def neighbors(self, side: str, node: int) -> set:
        if side == PROBLEM_SIDE:
            return {m for p, m, _ in self.edges if p == node}
        if side == METHOD_SIDE:
            return {p for p, m, _ in self.edges if m == node}
        raise ValueError(f"bad side {side!r}")

    def nodes(self, side: str) -> frozenset:
        if side == PROBLEM_SIDE:
            return self.problem_nodes
        if side == METHOD_SIDE:
            return self.method_nodes
        raise ValueError(f"bad side {side!r}")


@dataclass
class GraphBuildReport:
    n_edges: int = 0
    skipped: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"# bipartite graph: {self.n_edges} edges, "
                 f"{len(self.skipped)} records skipped"]
        for pub_id, reason in self.skipped:
            lines.append(f"{pub_id}\t{reason}")
        return "\n".join(lines) + "\n"


def build_bipartite(
    extractions: ExtractionSet,
    problem_model: ClusterModel,
    method_model: ClusterModel,
) -> tuple[BipartiteGraph, GraphBuildReport]:
    """One edge per AI4Science record with non-noise clusters on both sides.

    Records failing the predicate are not edges; records passing it but
    lacking a cluster on either side are skipped and reported.
    """
    report = GraphBuildReport()
    edges = []
    for ext in extractions:
        if not ext.ai4science:
            continue
        p = problem_model.assignments.get(ext.pub_id)
        m = method_model.assignments.get(ext.pub_id)
        if p is None:
            report.skipped.append((ext.pub_id, "no problem cluster assignment"))
            continue
        if m is None:
            report.skipped.append((ext.pub_id, "no method cluster assignment"))
            continue
        if p == NOISE:
            report.skipped.append((ext.pub_id, "problem assigned to noise"))
            continue
        if m == NOISE:
            report.skipped.append((ext.pub_id, "method assigned to noise"))
            continue
        edges.append((p, m, ext.pub_id))
    report.n_edges = len(edges)
    graph = BipartiteGraph(
        problem_nodes=frozenset(problem_model.labels),
        method_nodes=frozenset(method_model.labels),
        edges=tuple(sorted(edges, key=lambda e: e[2])),
    )
    return graph, report


@dataclass
class DegreeStats:
    side: str
    weighted: bool
    degrees: dict
    mean: float


def degree_stats(graph: BipartiteGraph, side: str, weighted: bool = False) -> DegreeStats:
    """Per-node degree on one side.

    Unweighted counts distinct opposite-side neighbors; weighted counts
    incident edges (publications).
    """
    nodes = graph.nodes(side)
    if weighted:
        counts: Counter = Counter()
        for p, m, _ in graph.edges:
            counts[p if side == PROBLEM_SIDE else m] += 1
        degrees = {node: counts.get(node, 0) for node in nodes}
    else:
        neighbor_sets: dict[int, set] = defaultdict(set)
        for p, m, _ in graph.edges:
            if side == PROBLEM_SIDE:
                neighbor_sets[p].add(m)
            else:
                neighbor_sets[m].add(p)
        degrees = {node: len(neighbor_sets.get(node, ())) for node in nodes}
    mean = float(np.mean(list(degrees.values()))) if degrees else 0.0
    return DegreeStats(side=side, weighted=weighted, degrees=degrees, mean=mean)


@dataclass
class LogNormalFit:
    mu: float
    sigma: float
    goodness: float
    n_used: int
    n_filtered: int


def fit_lognormal(degrees) -> LogNormalFit:
    """Maximum-likelihood log-normal fit of a degree sample.

    mu and sigma are the mean and (population) standard deviation of the
    log-degrees; goodness is the Kolmogorov-Smirnov distance between the
    log sample and the fitted normal. Non-positive degrees are filtered
    and counted, at least 10 positive values are required.
    """
    values = np.asarray(list(degrees), dtype=np.float64)
    positive = values[values > 0]
    n_filtered = len(values) - len(positive)
    if len(positive) < 10:
        raise AtlasError(f"need at least 10 positive degrees, got {len(positive)}")
    logs = np.log(positive)
    mu = float(np.mean(logs))
    sigma = float(np.std(logs))
    if sigma == 0.0:
        # Point mass: the fitted degenerate distribution matches exactly.
        goodness = 0.0
    else:
        goodness = float(stats.kstest(logs, "norm", args=(mu, sigma)).statistic)
    return LogNormalFit(mu=mu, sigma=sigma, goodness=goodness,
                        n_used=len(positive), n_filtered=n_filtered)


@dataclass
class InvestigationPartition:
    """Regression split of clusters by how investigated they are.

    y (AI4Science count) regressed on x (total publications); clusters
    above the 95% pointwise confidence band for the mean response are
    well-investigated, below it under-investigated, inside excluded.
    """

    side: str
    well: list
    under: list
    excluded: list
    slope: float
    intercept: float
    through_origin: bool
    _band_params: dict = field(default_factory=dict, repr=False)

    def band(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Pointwise 95% confidence band (lower, upper) for the mean
        response at the given x values."""
        x = np.asarray(x, dtype=np.float64)
        p = self._band_params
        fitted = self.slope * x + self.intercept
        if self.through_origin:
            se = p["s"] * np.abs(x) / np.sqrt(p["sum_x2"])
        else:
            se = p["s"] * np.sqrt(1.0 / p["n"] + (x - p["x_mean"])**2 / p["sxx"])
        margin = p["t_crit"] * se
        return fitted - margin, fitted + margin

    def classify(self, x: float, y: float) -> str:
        lower, upper = self.band(np.array([x]))
        if y > upper[0]:
            return "well"
        if y < lower[0]:
            return "under"
        return "excluded"


def partition_investigation(
    cluster_totals: dict,
    cluster_ai4sci: dict,
    side: str = PROBLEM_SIDE,
    through_origin: bool = False,
) -> InvestigationPartition:
    """Split clusters into well/under/excluded around the regression line."""
    cluster_ids = sorted(cluster_totals)
    if len(cluster_ids) < 3:
        raise AtlasError("need at least 3 clusters for the regression")
    x = np.array([cluster_totals[c] for c in cluster_ids], dtype=np.float64)
    y = np.array([cluster_ai4sci.get(c, 0) for c in cluster_ids], dtype=np.float64)
    n = len(x)
    if np.all(x == x[0]):
        raise AtlasError("regression undefined: all cluster totals identical")

    if through_origin:
        sum_x2 = float(np.sum(x * x))
        slope = float(np.sum(x * y) / sum_x2)
        intercept = 0.0
        residuals = y - slope * x
        dof = n - 1
        s = float(np.sqrt(np.sum(residuals**2) / dof))
        band_params = {"s": s, "sum_x2": sum_x2, "n": n,
                       "t_crit": float(stats.t.ppf(0.975, dof))}
    else:
        x_mean = float(np.mean(x))
        y_mean = float(np.mean(y))
        sxx = float(np.sum((x - x_mean)**2))
        slope = float(np.sum((x - x_mean) * (y - y_mean)) / sxx)
        intercept = y_mean - slope * x_mean
        residuals = y - (slope * x + intercept)
        dof = n - 2
        s = float(np.sqrt(np.sum(residuals**2) / dof))
        band_params = {"s": s, "x_mean": x_mean, "sxx": sxx, "n": n,
                       "t_crit": float(stats.t.ppf(0.975, dof))}

    partition = InvestigationPartition(
        side=side, well=[], under=[], excluded=[],
        slope=slope, intercept=intercept, through_origin=through_origin,
        _band_params=band_params,
    )
    lower, upper = partition.band(x)
    for i, c in enumerate(cluster_ids):
        if y[i] > upper[i]:
            partition.well.append(c)
        elif y[i] < lower[i]:
            partition.under.append(c)
        else:
            partition.excluded.append(c)
    return partition


def partition_table(partition: InvestigationPartition, labels: dict,
                    totals: dict, ai4sci: dict) -> str:
    """Tabular text report (cluster_id, label, total, ai4sci, class)."""
    rows = ["cluster_id\tlabel\ttotal\tai4sci\tclass"]
    classes = {}
    for c in partition.well:
        classes[c] = "well"
    for c in partition.under:
        classes[c] = "under"
    for c in partition.excluded:
        classes[c] = "excluded"
    for c in sorted(classes):
        rows.append(f"{c}\t{labels.get(c, '')}\t{totals.get(c, 0)}\t"
                    f"{ai4sci.get(c, 0)}\t{classes[c]}")
    return "\n".join(rows) + "\n"


def community_breakdown(
    corpus: Corpus,
    extractions: ExtractionSet,
    problem_model: ClusterModel,
    method_model: ClusterModel,
) -> dict:
    """Per community and side: clusters ranked by the number of
    AI4Science publications that community contributed (descending,
    ties by cluster id)."""
    counts: dict[str, dict[str, Counter]] = defaultdict(
        lambda: {PROBLEM_SIDE: Counter(), METHOD_SIDE: Counter()})
    for ext in extractions:
        if not ext.ai4science:
            continue
        pub = corpus.get(ext.pub_id)
        if pub is None:
            continue
        for side, model in ((PROBLEM_SIDE, problem_model), (METHOD_SIDE, method_model)):
            cluster = model.assignments.get(ext.pub_id)
            if cluster is not None and cluster != NOISE:
                counts[pub.community][side][cluster] += 1
    tables: dict[str, dict[str, list]] = {}
    for community, sides in sorted(counts.items()):
        tables[community] = {}
        for side, model in ((PROBLEM_SIDE, problem_model), (METHOD_SIDE, method_model)):
            ranked = sorted(sides[side].items(), key=lambda item: (-item[1], item[0]))
            tables[community][side] = [
                (cluster, model.labels.get(cluster, ""), count)
                for cluster, count in ranked
            ]
    return tables


def _node_key(side: str, cluster_id: int) -> str:
    return ("P" if side == PROBLEM_SIDE else "M") + str(cluster_id)


def export_graph(
    graph: BipartiteGraph,
    min_edge_weight: int,
    path: str | Path,
    problem_labels: dict | None = None,
    method_labels: dict | None = None,
    graphml: bool = False,
) -> None:
    """Write nodes.tsv and edges.tsv (and optionally graph.graphml).

    Edges below `min_edge_weight` are dropped; nodes isolated after the
    filter are dropped too. Node degree is the unweighted degree of the
    full (unfiltered) graph.
    """
    if min_edge_weight < 0:
        raise ValueError("min_edge_weight must be >= 0")
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    problem_labels = problem_labels or {}
    method_labels = method_labels or {}

    weights = graph.pair_weights()
    kept = {pair: w for pair, w in weights.items() if w >= min_edge_weight}
    live_problems = {p for p, _ in kept}
    live_methods = {m for _, m in kept}
    full_p = degree_stats(graph, PROBLEM_SIDE, weighted=False).degrees
    full_m = degree_stats(graph, METHOD_SIDE, weighted=False).degrees

    node_rows = ["id\tside\tlabel\tdegree"]
    for p in sorted(live_problems):
        node_rows.append(f"{_node_key(PROBLEM_SIDE, p)}\t{PROBLEM_SIDE}\t"
                         f"{problem_labels.get(p, '')}\t{full_p.get(p, 0)}")
    for m in sorted(live_methods):
        node_rows.append(f"{_node_key(METHOD_SIDE, m)}\t{METHOD_SIDE}\t"
                         f"{method_labels.get(m, '')}\t{full_m.get(m, 0)}")
    atomic_write_text(directory / "nodes.tsv", "\n".join(node_rows) + "\n")

    edge_rows = ["source\ttarget\tweight"]
    for (p, m) in sorted(kept):
        edge_rows.append(f"{_node_key(PROBLEM_SIDE, p)}\t"
                         f"{_node_key(METHOD_SIDE, m)}\t{kept[(p, m)]}")
    atomic_write_text(directory / "edges.tsv", "\n".join(edge_rows) + "\n")

    if graphml:
        _write_graphml(directory / "graph.graphml", kept, live_problems,
                       live_methods, full_p, full_m, problem_labels, method_labels)


def _write_graphml(path, kept, live_problems, live_methods, full_p, full_m,
                   problem_labels, method_labels):
    root = ET.Element("graphml", xmlns="http://graphml.graphdrawing.org/xmlns")
    for key_id, attr in (("d0", "side"), ("d1", "label"), ("d2", "degree"),
                         ("d3", "weight")):
        target = "edge" if attr == "weight" else "node"
        kind = "int" if attr in ("degree", "weight") else "string"
        ET.SubElement(root, "key", {"id": key_id, "for": target,
                                    "attr.name": attr, "attr.type": kind})
    g = ET.SubElement(root, "graph", id="atlas", edgedefault="undirected")

    def add_node(key, side, label, degree):
        node = ET.SubElement(g, "node", id=key)
        ET.SubElement(node, "data", key="d0").text = side
        ET.SubElement(node, "data", key="d1").text = label
        ET.SubElement(node, "data", key="d2").text = str(degree)

    for p in sorted(live_problems):
        add_node(_node_key(PROBLEM_SIDE, p), PROBLEM_SIDE,
                 problem_labels.get(p, ""), full_p.get(p, 0))
    for m in sorted(live_methods):
        add_node(_node_key(METHOD_SIDE, m), METHOD_SIDE,
                 method_labels.get(m, ""), full_m.get(m, 0))
    for (p, m) in sorted(kept):
        edge = ET.SubElement(g, "edge", source=_node_key(PROBLEM_SIDE, p),
                             target=_node_key(METHOD_SIDE, m))
        ET.SubElement(edge, "data", key="d3").text = str(kept[(p, m)])
    ET.indent(root)
    atomic_write_text(path, ET.tostring(root, encoding="unicode") + "\n")


def load_graph(path: str | Path) -> tuple[BipartiteGraph, dict, dict]:
    """Rebuild a graph from an export directory.

    Publication identities are not exported, so edge multiplicity is
    reconstructed with synthetic pub ids; pair weights and node sets
    round-trip exactly at threshold 0.
    """
    directory = Path(path)
    node_lines = (directory / "nodes.tsv").read_text(encoding="utf-8").splitlines()
    edge_lines = (directory / "edges.tsv").read_text(encoding="utf-8").splitlines()
    problem_labels = {}
    method_labels = {}
    problems = set()
    methods = set()
    for line in node_lines[1:]:
        key, side, label, _ = line.split("\t")
        cluster = int(key[1:])
        if side == PROBLEM_SIDE:
            problems.add(cluster)
            problem_labels[cluster] = label
        else:
            methods.add(cluster)
            method_labels[cluster] = label
    edges = []
    counter = 0
    for line in edge_lines[1:]:
        src, dst, weight = line.split("\t")
        for _ in range(int(weight)):
            edges.append((int(src[1:]), int(dst[1:]), f"synthetic-{counter:06d}"))
            counter += 1
    graph = BipartiteGraph(problem_nodes=frozenset(problems),
                           method_nodes=frozenset(methods),
                           edges=tuple(edges))
    return graph, problem_labels, method_labels
