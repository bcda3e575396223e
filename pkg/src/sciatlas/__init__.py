"""sciatlas: an atlas of scientific problems and AI methods built from abstracts.

The pipeline turns a corpus of publication titles/abstracts into:

* per-paper problem/method/usage aspects (pluggable text-generation client),
* semantic embeddings and 2D cluster maps of both aspect spaces,
* a bipartite problem-cluster <-> method-cluster graph with degree and
  gap analyses,
* four link predictors (Katz index, node2vec, retrieval-augmented
  generation, graph-in-prompt generation) plus an imitation baseline,
* ranking and text-generation metrics for all of the above.

Everything runs offline with the deterministic mock backends; remote
backends are configuration, not code.
"""

__version__ = "0.1.0"

from .corpus import Corpus, CorpusSplit, Publication, load_corpus, split_by_year
from .extraction import AspectExtraction, ExtractionSet, MockGenClient, batch_extract
from .embedding import HashingProvider, cosine_similarity, embed_aspects
from .projection import LargeVisLayout, project_2d
from .density import HDBSCAN, cluster_hdbscan
from .clusters import ClusterModel, merge_adjacent_same_label, top_terms_tfidf
from .atlas import BipartiteGraph, build_bipartite, degree_stats, fit_lognormal
from .linkpred import katz_scores, predict_katz, predict_node2vec, train_node2vec
from .evaluate import precision_recall_f1_at_k, rouge1_f

__all__ = [
    "AspectExtraction",
    "BipartiteGraph",
    "ClusterModel",
    "Corpus",
    "CorpusSplit",
    "ExtractionSet",
    "HDBSCAN",
    "HashingProvider",
    "LargeVisLayout",
    "MockGenClient",
    "Publication",
    "batch_extract",
    "build_bipartite",
    "cluster_hdbscan",
    "cosine_similarity",
    "degree_stats",
    "embed_aspects",
    "fit_lognormal",
    "katz_scores",
    "load_corpus",
    "merge_adjacent_same_label",
    "precision_recall_f1_at_k",
    "predict_katz",
    "predict_node2vec",
    "project_2d",
    "rouge1_f",
    "split_by_year",
    "top_terms_tfidf",
    "train_node2vec",
]
