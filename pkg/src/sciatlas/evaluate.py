"""Scoring for prediction runs.

Ranking metrics: per-source precision/recall/F1 at K against truth
target sets, macro-averaged; sources with empty truth are excluded and
reported. Novel-link counting diffs predictions against a reference
pair set. Text metrics: unigram ROUGE-1 F, embedding cosine, and a
pluggable external scorer; per query the best score among the top-K
candidates counts.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

from ._util import tokenize
from .embedding import INSTRUCTIONS, EmbeddingProvider, cosine_similarity


class EvalError(Exception):
    """Evaluation inputs unusable."""


@dataclass
class SourceMetrics:
    hits: int
    truth_size: int
    precision: float
    recall: float
    f1: float


@dataclass
class MetricReport:
    """Macro-averaged ranking metrics at one K."""

    k: int
    precision: float
    recall: float
    f1: float
    n_sources: int
    n_excluded_empty_truth: int
    n_missing_predictions: int
    per_source: dict = field(default_factory=dict)

    def to_row(self) -> str:
        return (f"{self.k}\t{self.precision:.6f}\t{self.recall:.6f}\t"
                f"{self.f1:.6f}\t{self.n_sources}")


def precision_recall_f1_at_k(predictions: dict, truth: dict, K: int) -> MetricReport:
    """Macro-averaged P/R/F1 at K.

    `predictions` maps source -> ranked target list; `truth` maps
    source -> target set. Precision keeps denominator K even when the
    prediction list is shorter; a truth source with no prediction list
    scores zero. Empty truth sets are excluded from the average.
    """
    if K < 1:
        raise ValueError("K must be positive")
    per_source: dict = {}
    n_excluded = 0
    n_missing = 0
    for source in sorted(truth, key=str):
        targets = truth[source]
        if not targets:
            n_excluded += 1
            continue
        ranked = predictions.get(source)
        if ranked is None:
            n_missing += 1
            ranked = []
        top = list(ranked)[:K]
        hits = sum(1 for t in top if t in targets)
        precision = hits / K
        recall = hits / len(targets)
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        per_source[source] = SourceMetrics(hits=hits, truth_size=len(targets),
                                           precision=precision, recall=recall,
                                           f1=f1)
    n = len(per_source)
    if n == 0:
        return MetricReport(k=K, precision=0.0, recall=0.0, f1=0.0, n_sources=0,
                            n_excluded_empty_truth=n_excluded,
                            n_missing_predictions=n_missing)
    return MetricReport(
        k=K,
        precision=sum(m.precision for m in per_source.values()) / n,
        recall=sum(m.recall for m in per_source.values()) / n,
        f1=sum(m.f1 for m in per_source.values()) / n,
        n_sources=n,
        n_excluded_empty_truth=n_excluded,
        n_missing_predictions=n_missing,
        per_source=per_source,
    )


def count_novel_links(predictions: dict, reference_link_set: set, K: int) -> int:
    """Distinct predicted (source, target) pairs in the top K that do not
    appear in the reference pair set."""
    predicted_pairs = set()
    for source, ranked in predictions.items():
        for target in list(ranked)[:K]:
            predicted_pairs.add((source, target))
    return len(predicted_pairs - reference_link_set)


def rouge1_f(candidate: str, reference: str) -> float:
    """Unigram F-measure with multiset clipping.

    Tokens are lowercased alphanumeric runs. Returns 0 when either side
    has no tokens (p + r = 0 has no harmonic mean).
    """
    cand = Counter(tokenize(candidate))
    ref = Counter(tokenize(reference))
    if not cand or not ref:
        return 0.0
    overlap = sum((cand & ref).values())
    p = overlap / sum(cand.values())
    r = overlap / sum(ref.values())
    if p + r == 0.0:
        return 0.0
    return 2 * p * r / (p + r)


def best_score_at_k(candidates: list, reference: str, scorer) -> float:
    """Best scorer(candidate, reference) among the (at most K) candidates."""
    if not candidates:
        raise EvalError("no candidates to score")
    return max(scorer(candidate, reference) for candidate in candidates)


class CosineScorer:
    """Text pair scorer backed by an embedding provider.

    The instruction matches the side of the reference text, so method
    descriptions are compared in method space and problem descriptions
    in problem space.
    """

    name = "cosine"

    def __init__(self, provider: EmbeddingProvider, side: str):
        if side not in INSTRUCTIONS:
            raise ValueError(f"bad side {side!r}")
        self.provider = provider
        self.instruction = INSTRUCTIONS[side]

    def __call__(self, candidate: str, reference: str) -> float:
        if not tokenize(candidate) or not tokenize(reference):
            return 0.0
        a = self.provider.embed(self.instruction, candidate)
        b = self.provider.embed(self.instruction, reference)
        return cosine_similarity(a, b)


class ExternalScorer:
    """Adapter for an external scoring service.

    POSTs {"candidates": [...], "references": [...]} to `url` and
    expects {"scores": [...]}. Built for learned metrics that cannot
    run in-process; construct only when configured.
    """

    name = "external"

    def __init__(self, url: str, timeout: float = 120.0):
        self.url = url
        self.timeout = timeout

    def __call__(self, candidate: str, reference: str) -> float:
        import requests

        try:
            resp = requests.post(self.url, json={"candidates": [candidate],
                                                 "references": [reference]},
                                 timeout=self.timeout)
        except requests.RequestException as exc:
            raise EvalError(f"external scorer unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise EvalError(f"external scorer returned HTTP {resp.status_code}")
        try:
            return float(resp.json()["scores"][0])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise EvalError(f"malformed scorer response: {exc}") from exc


@dataclass
class TextGenReport:
    """Mean best-score table: rows (method, scorer, K) -> mean score.

    Cells for scorers that were not configured hold the string "n/a".
    """

    direction: str
    partition: str
    ks: list
    rows: dict = field(default_factory=dict)
    n_queries: int = 0

    def cell(self, method: str, scorer: str, k: int):
        return self.rows.get((method, scorer, k), "n/a")

    def to_text(self) -> str:
        scorers = sorted({key[1] for key in self.rows})
        methods = sorted({key[0] for key in self.rows})
        lines = [f"# direction={self.direction} partition={self.partition} "
                 f"queries={self.n_queries}"]
        header = ["method"] + [f"{s}@{k}" for s in scorers for k in self.ks]
        lines.append("\t".join(header))
        for method in methods:
            cells = [method]
            for s in scorers:
                for k in self.ks:
                    value = self.cell(method, s, k)
                    cells.append(value if isinstance(value, str) else f"{value:.6f}")
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "direction": self.direction,
            "partition": self.partition,
            "ks": self.ks,
            "n_queries": self.n_queries,
            "cells": [
                {"method": m, "scorer": s, "k": k, "value": v}
                for (m, s, k), v in sorted(self.rows.items(),
                                           key=lambda item: (item[0][0],
                                                             item[0][1],
                                                             item[0][2]))
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def text_gen_report(
    runs: dict,
    references: dict,
    scorers: dict,
    ks: list,
    direction: str = "",
    partition: str = "all",
) -> TextGenReport:
    """Mean best-score @K for every (method, scorer, K).

    `runs` maps method -> {query id -> ranked candidate texts};
    `references` maps query id -> reference text. A scorer mapped to
    None renders "n/a" cells. Queries without candidates score 0 (the
    generator produced nothing usable for them).
    """
    report = TextGenReport(direction=direction, partition=partition,
                           ks=sorted(ks), n_queries=len(references))
    if not references:
        return report
    query_ids = sorted(references, key=str)
    for method, per_query in sorted(runs.items()):
        missing = [q for q in query_ids if per_query.get(q) is None]
        if missing:
            raise EvalError(
                f"run {method!r} lacks generated texts for {len(missing)} "
                f"queries (first: {missing[0]!r})")
        for scorer_name, scorer in sorted(scorers.items()):
            if scorer is None:
                for k in report.ks:
                    report.rows[(method, scorer_name, k)] = "n/a"
                continue
            for k in report.ks:
                total = 0.0
                for q in query_ids:
                    candidates = list(per_query[q])[:k]
                    if candidates:
                        total += best_score_at_k(candidates, references[q], scorer)
                report.rows[(method, scorer_name, k)] = total / len(query_ids)
    return report
