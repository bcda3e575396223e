"""Cluster models: TF-IDF top terms, generated labels, merge, persistence.

A ClusterModel describes one side (problem or method): which cluster
each record belongs to, a short generated label per cluster, mean
embedding centroids, and the TF-IDF terms that fed the labeling prompt.

Clusters that end up with the same label and sit next to each other in
the 2D layout are merged (transitively, to a fixpoint) since they
describe the same thing.
"""

from __future__ import annotations

import ast
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._util import atomic_write_text, tokenize
from .density import NOISE
from .embedding import AspectVectors, load_vectors, save_vectors
from .extraction import ExtractionSet, GenClient, GenError, load_prompt, render_prompt
from .projection import Projection2D

DEFAULT_TOP_TERMS = 20
DEFAULT_SUMMARY_SAMPLES = 10
# Fraction of the layout bounding-box diagonal within which same-label
# cluster centroids count as adjacent.
DEFAULT_ADJACENCY_FRACTION = 0.05


class ClusterModelError(Exception):
    """Cluster model construction or persistence problem."""


def top_terms_tfidf(cluster_docs: list[str], k: int = DEFAULT_TOP_TERMS) -> list[list[str]]:
    """Top-k TF-IDF terms for each cluster document.

    One document per cluster (its concatenated aspect texts); the
    document collection is all clusters on the side. TF is the raw
    in-document count, IDF is ln(N / df). Ties break lexicographically.
    """
    if not cluster_docs:
        raise ClusterModelError("no cluster documents given")
    if k < 1:
        raise ValueError("k must be positive")
    token_counts = [Counter(tokenize(doc)) for doc in cluster_docs]
    n_docs = len(cluster_docs)
    doc_freq: Counter = Counter()
    for counts in token_counts:
        doc_freq.update(counts.keys())
    results = []
    for counts in token_counts:
        scored = sorted(
            ((term, count * math.log(n_docs / doc_freq[term]))
             for term, count in counts.items()),
            key=lambda item: (-item[1], item[0]),
        )
        results.append([term for term, _ in scored[:k]])
    return results


def _format_summary_examples(side: str, samples: list) -> str:
    blocks = []
    for ext in samples:
        if side == "problem":
            blocks.append(
                f"Problem (keyword/keyphrase): {ext.problem_keyphrase}\n"
                f"Problem (definition): {ext.problem_definition}\n"
                f"Problem discipline: {ext.problem_discipline or 'N/A'}"
            )
        else:
            blocks.append(
                f"Method (keyword/keyphrase): {ext.method_keyphrase}\n"
                f"Method (definition): {ext.method_definition}"
            )
    return "\n\n".join(blocks)


def parse_one_element_list(response: str) -> str | None:
    """Parse the '["Label"]' response shape; None when it does not parse."""
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
        if isinstance(value, list) and value and isinstance(value[0], str):
            label = value[0].strip()
            if label:
                return label
    return None


def summarize_cluster(client: GenClient, side: str, top_terms: list[str],
                      samples: list, prompt_version: str = "v1",
                      flags: list | None = None) -> str:
    """One short label for a cluster from its top terms and sample records.

    Unparseable or failed generations yield "N/A" and append to `flags`.
    """
    if side not in ("problem", "method"):
        raise ValueError(f"side must be 'problem' or 'method', got {side!r}")
    task = f"summarize_{side}_cluster"
    template = load_prompt(task, prompt_version)
    prompt = render_prompt(template, {
        "top words": ", ".join(top_terms),
        "examples": _format_summary_examples(side, samples),
    })
    try:
        response = client.generate(prompt, model_id=client.model_id)
    except GenError as exc:
        if flags is not None:
            flags.append(f"summary generation failed: {exc}")
        return "N/A"
    label = parse_one_element_list(response)
    if label is None:
        if flags is not None:
            flags.append("unparseable summary response")
        return "N/A"
    return label


@dataclass
class ClusterModel:
    """Cluster structure of one side: assignments, labels, centroids, terms."""

    side: str
    assignments: dict[str, int]
    labels: dict[int, str]
    centroids: dict[int, np.ndarray]
    top_terms: dict[int, list[str]] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.side not in ("problem", "method"):
            raise ClusterModelError(f"bad side {self.side!r}")
        cluster_ids = {c for c in self.assignments.values() if c != NOISE}
        missing = cluster_ids - set(self.labels)
        if missing:
            raise ClusterModelError(f"clusters without labels: {sorted(missing)}")

    def cluster_ids(self) -> list[int]:
        return sorted(self.labels)

    def members(self, cluster_id: int) -> list[str]:
        return sorted(p for p, c in self.assignments.items() if c == cluster_id)

    def n_clusters(self) -> int:
        return len(self.labels)

    def n_noise(self) -> int:
        return sum(1 for c in self.assignments.values() if c == NOISE)

    def label_to_ids(self) -> dict[str, list[int]]:
        table = defaultdict(list)
        for cid in self.cluster_ids():
            table[self.labels[cid]].append(cid)
        return dict(table)


def _mean_rows(matrix: np.ndarray, rows: list[int]) -> np.ndarray:
    return matrix[rows].mean(axis=0)


def build_cluster_model(
    side: str,
    extractions: ExtractionSet,
    vectors: AspectVectors,
    proj: Projection2D,
    labels_array: np.ndarray,
    client: GenClient,
    top_k: int = DEFAULT_TOP_TERMS,
    n_samples: int = DEFAULT_SUMMARY_SAMPLES,
    prompt_version: str = "v1",
) -> ClusterModel:
    """Assemble a ClusterModel from clustering output.

    `labels_array` aligns with `proj.ids` (and `vectors.ids`). Labels
    come from the generation client; samples are the first `n_samples`
    members by pub id.
    """
    if list(vectors.ids) != list(proj.ids):
        raise ClusterModelError("vector ids and projection ids differ")
    if len(labels_array) != len(proj.ids):
        raise ClusterModelError("label array does not align with projection")

    assignments = {pub_id: int(c) for pub_id, c in zip(proj.ids, labels_array)}
    members: dict[int, list[int]] = defaultdict(list)
    for row, c in enumerate(labels_array):
        if int(c) != NOISE:
            members[int(c)].append(row)

    def text_of(pub_id: str) -> str:
        ext = extractions[pub_id]
        text = ext.problem_text() if side == "problem" else ext.method_text()
        return text or ""

    cluster_ids = sorted(members)
    docs = [" ".join(text_of(vectors.ids[row]) for row in members[c])
            for c in cluster_ids]
    flags: list[str] = []
    labels: dict[int, str] = {}
    centroids: dict[int, np.ndarray] = {}
    terms: dict[int, list[str]] = {}
    if cluster_ids:
        per_cluster_terms = top_terms_tfidf(docs, k=top_k)
        for c, cluster_terms in zip(cluster_ids, per_cluster_terms):
            member_ids = sorted(vectors.ids[row] for row in members[c])
            samples = [extractions[pub_id] for pub_id in member_ids[:n_samples]]
            cluster_flags: list[str] = []
            label = summarize_cluster(client, side, cluster_terms, samples,
                                      prompt_version=prompt_version,
                                      flags=cluster_flags)
            flags.extend(f"cluster {c}: {msg}" for msg in cluster_flags)
            labels[c] = label
            terms[c] = cluster_terms
            centroids[c] = _mean_rows(vectors.matrix.astype(np.float64), members[c])
    return ClusterModel(side=side, assignments=assignments, labels=labels,
                        centroids=centroids, top_terms=terms, flags=flags)


def merge_adjacent_same_label(model: ClusterModel, proj: Projection2D,
                              adjacency_radius: float,
                              vectors: AspectVectors | None = None) -> ClusterModel:
    """Union clusters that share a label and sit within `adjacency_radius`
    of each other in the layout (closed transitively, then iterated to a
    fixpoint so the merge is idempotent).

    The merged cluster keeps the smallest id in its group. Centroids are
    recomputed from member embedding vectors when `vectors` is given,
    otherwise by member-count-weighted average of the old centroids
    (identical result, saves the matrix).
    """
    if adjacency_radius < 0:
        raise ValueError("adjacency_radius must be non-negative")
    row_of = {pub_id: i for i, pub_id in enumerate(proj.ids)}
    assignments = dict(model.assignments)
    labels = dict(model.labels)
    terms = {c: list(v) for c, v in model.top_terms.items()}

    while True:
        cluster_ids = sorted(labels)
        members: dict[int, list[str]] = defaultdict(list)
        for pub_id, c in assignments.items():
            if c != NOISE:
                members[c].append(pub_id)
        centers = {
            c: proj.coords[[row_of[p] for p in members[c]]].mean(axis=0)
            for c in cluster_ids
        }
        parent = {c: c for c in cluster_ids}

        def find(c: int) -> int:
            while parent[c] != c:
                parent[c] = parent[parent[c]]
                c = parent[c]
            return c

        merged_any = False
        by_label = defaultdict(list)
        for c in cluster_ids:
            by_label[labels[c]].append(c)
        for group in by_label.values():
            for i, a in enumerate(group):
                for b in group[i + 1:]:
                    if np.linalg.norm(centers[a] - centers[b]) <= adjacency_radius:
                        ra, rb = find(a), find(b)
                        if ra != rb:
                            parent[max(ra, rb)] = min(ra, rb)
                            merged_any = True
        if not merged_any:
            break
        new_assignments = {}
        for pub_id, c in assignments.items():
            new_assignments[pub_id] = find(c) if c != NOISE else NOISE
        survivors = {find(c) for c in cluster_ids}
        labels = {c: labels[c] for c in survivors}
        new_terms = {}
        for c in survivors:
            group_members = [g for g in cluster_ids if find(g) == c]
            if len(group_members) == 1:
                new_terms[c] = terms[c]
            else:
                new_terms[c] = []
        terms = new_terms
        assignments = new_assignments

    members = defaultdict(list)
    for pub_id, c in assignments.items():
        if c != NOISE:
            members[c].append(pub_id)

    if vectors is not None:
        vec_row = {pub_id: i for i, pub_id in enumerate(vectors.ids)}
        centroids = {
            c: _mean_rows(vectors.matrix.astype(np.float64),
                          [vec_row[p] for p in members[c]])
            for c in sorted(labels)
        }
    else:
        old_sizes = Counter(c for c in model.assignments.values() if c != NOISE)
        group_of = defaultdict(list)
        for old_c in model.labels:
            # Every old cluster's members now carry the merged id.
            sample = next(p for p, c in model.assignments.items() if c == old_c)
            group_of[assignments[sample]].append(old_c)
        centroids = {}
        for c, olds in group_of.items():
            total = sum(old_sizes[o] for o in olds)
            centroids[c] = sum(model.centroids[o] * (old_sizes[o] / total)
                               for o in olds)

    # Merged clusters keep an empty term list here; recompute_top_terms
    # refills them from the extraction texts, which this function does
    # not hold.
    return ClusterModel(side=model.side, assignments=assignments, labels=labels,
                        centroids=centroids, top_terms=terms,
                        flags=list(model.flags))


def recompute_top_terms(model: ClusterModel, extractions: ExtractionSet,
                        k: int = DEFAULT_TOP_TERMS) -> None:
    """Fill in TF-IDF terms for clusters whose term lists are empty
    (freshly merged ones), using the full side vocabulary."""

    def text_of(pub_id: str) -> str:
        ext = extractions[pub_id]
        text = ext.problem_text() if model.side == "problem" else ext.method_text()
        return text or ""

    cluster_ids = model.cluster_ids()
    if not cluster_ids:
        return
    docs = [" ".join(text_of(p) for p in model.members(c)) for c in cluster_ids]
    per_cluster = top_terms_tfidf(docs, k=k)
    for c, cluster_terms in zip(cluster_ids, per_cluster):
        if not model.top_terms.get(c):
            model.top_terms[c] = cluster_terms


def save_cluster_model(model: ClusterModel, directory: str | Path) -> None:
    """Persist as three artifacts: assignments TSV, labels TSV, centroid
    vectors in the embedding file format."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    side = model.side
    lines = ["pub_id\tside\tcluster_id"]
    for pub_id in sorted(model.assignments):
        lines.append(f"{pub_id}\t{side}\t{model.assignments[pub_id]}")
    atomic_write_text(directory / f"assignments_{side}.tsv", "\n".join(lines) + "\n")

    lines = ["cluster_id\tlabel\ttop_terms"]
    for c in model.cluster_ids():
        terms = ",".join(model.top_terms.get(c, []))
        lines.append(f"{c}\t{model.labels[c]}\t{terms}")
    atomic_write_text(directory / f"labels_{side}.tsv", "\n".join(lines) + "\n")

    ids = [str(c) for c in model.cluster_ids()]
    if ids:
        matrix = np.stack([model.centroids[c] for c in model.cluster_ids()])
    else:
        matrix = np.empty((0, 0), dtype=np.float32)
    vectors = AspectVectors(ids=ids, matrix=matrix.astype(np.float32),
                            instruction_id=f"{side}-centroid",
                            provider_id="cluster-centroids")
    save_vectors(vectors, directory / f"centroids_{side}")


def load_cluster_model(directory: str | Path, side: str) -> ClusterModel:
    directory = Path(directory)
    try:
        assign_lines = (directory / f"assignments_{side}.tsv").read_text(
            encoding="utf-8").splitlines()
        label_lines = (directory / f"labels_{side}.tsv").read_text(
            encoding="utf-8").splitlines()
    except OSError as exc:
        raise ClusterModelError(f"cannot read cluster model: {exc}") from exc
    assignments = {}
    for line in assign_lines[1:]:
        pub_id, _, cluster_id = line.split("\t")
        assignments[pub_id] = int(cluster_id)
    labels = {}
    terms = {}
    for line in label_lines[1:]:
        cluster_id, label, term_csv = line.split("\t")
        labels[int(cluster_id)] = label
        terms[int(cluster_id)] = [t for t in term_csv.split(",") if t]
    vectors = load_vectors(directory / f"centroids_{side}")
    centroids = {int(cid): vectors.matrix[i].astype(np.float64)
                 for i, cid in enumerate(vectors.ids)}
    return ClusterModel(side=side, assignments=assignments, labels=labels,
                        centroids=centroids, top_terms=terms)
