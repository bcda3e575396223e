"""Generate the bundled mini corpus under src/sciatlas/data/mini/.

200 abstracts over 8 problem families and 7 methods, written so the mock
extraction backend recovers every aspect from its keyword tables. Years
split train (<= 2022) from test (2023-24); four problem families adopt a
method in the test years that they never used in train, giving the link
predictors a non-trivial held-out target reachable through two-hop paths
in the training graph:

    protein folding        -> transformer language model
    drug candidate screening -> deep convolutional neural network
    seismic hazard         -> deep convolutional neural network
    crop yield             -> graph neural network

Rerun after changing the plan; output is deterministic.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "src" / "sciatlas" / "data" / "mini"

VENUE_MAP = {
    "Nature": "science",
    "Science": "science",
    "PNAS": "science",
    "Cell": "science",
    "Physical Review Letters": "science",
    "NeurIPS": "ai",
    "ICML": "ai",
    "ICLR": "ai",
    "AAAI": "ai",
    "ACL": "ai",
}
SCI_VENUES = ["Nature", "Science", "PNAS", "Cell", "Physical Review Letters"]
AI_VENUES = ["NeurIPS", "ICML", "ICLR", "AAAI", "ACL"]

# problem trigger -> (title noun phrase, abstract lead, filler pool)
FAMILIES = {
    "protein folding": (
        "protein structure prediction",
        "Accurate models of protein folding remain central to structural biology.",
        ["We study residue contact geometry across folds.",
         "Side-chain packing and backbone torsion are treated jointly.",
         "Evaluation covers monomers and small complexes."],
    ),
    "climate projection": (
        "regional climate modeling",
        "Regional climate projection under shifting emission pathways is examined.",
        ["We downscale coarse reanalysis fields to basin level.",
         "Precipitation extremes are tracked across decades.",
         "Bias correction is applied against station records."],
    ),
    "drug candidate screening": (
        "compound screening for drug discovery",
        "High-throughput drug candidate screening narrows large chemical libraries.",
        ["Binding affinity against kinase targets is estimated.",
         "We rank scaffolds by predicted admet liability.",
         "Hit expansion proceeds from confirmed actives."],
    ),
    "galaxy morphology": (
        "galaxy morphology classification",
        "Galaxy morphology catalogues from wide-field surveys keep growing.",
        ["Spiral arm prominence and bulge ratio are annotated.",
         "We separate mergers from projected overlaps.",
         "Low surface brightness features are preserved."],
    ),
    "seismic hazard": (
        "earthquake hazard assessment",
        "Seismic hazard estimation supports building codes and insurance pricing.",
        ["Ground motion records are pooled across regions.",
         "We model rupture recurrence on mapped faults.",
         "Site amplification terms are fit per station."],
    ),
    "crop yield": (
        "crop yield forecasting",
        "County-level crop yield prediction guides storage and logistics planning.",
        ["Weather windows during grain fill dominate the signal.",
         "We fuse satellite phenology with soil profiles.",
         "Out-of-season holdouts test transfer."],
    ),
    "alloy design": (
        "alloy composition search",
        "Designing alloy compositions with target properties is combinatorially hard.",
        ["Phase stability is screened over ternary systems.",
         "We couple thermodynamic databases with search.",
         "Hardness and ductility trade off along the frontier."],
    ),
    "benchmark leaderboard": (
        "a public benchmark leaderboard",
        "We maintain a benchmark leaderboard comparing submitted systems.",
        ["Submissions are scored on a hidden split.",
         "Leader churn is analysed across releases.",
         "Compute budgets are reported per entry."],
    ),
}

METHODS = {
    "cnn": ("convolutional network",
            "a deep convolutional network over gridded inputs"),
    "gnn": ("graph neural", "graph neural message passing on relational structure"),
    "rf": ("random forest", "a random forest ensemble with engineered features"),
    "tr": ("transformer", "a transformer encoder with pretrained weights"),
    "rl": ("reinforcement learning",
           "reinforcement learning with a shaped reward"),
    "fe": ("finite element", "finite element analysis on an adaptive mesh"),
    "ms": ("mass spectrometry", "mass spectrometry profiling of prepared samples"),
}

# (family, method or None, n_train, n_test, venue pool)
PLAN = [
    ("protein folding", "cnn", 12, 2, "mix"),
    ("protein folding", "gnn", 6, 0, "mix"),
    ("protein folding", "tr", 0, 3, "mix"),     # novel in test
    ("protein folding", "ms", 3, 2, "sci"),
    ("protein folding", None, 1, 0, "sci"),
    ("climate projection", "cnn", 7, 3, "mix"),
    ("climate projection", "tr", 9, 2, "mix"),
    ("climate projection", "fe", 4, 0, "sci"),
    ("drug candidate screening", "gnn", 12, 1, "mix"),
    ("drug candidate screening", "rf", 8, 0, "mix"),
    ("drug candidate screening", "cnn", 0, 3, "mix"),   # novel in test
    ("drug candidate screening", "ms", 3, 0, "sci"),
    ("galaxy morphology", "cnn", 9, 2, "mix"),
    ("galaxy morphology", "rf", 8, 2, "mix"),
    ("galaxy morphology", "rl", 6, 1, "mix"),
    ("galaxy morphology", "fe", 3, 0, "sci"),
    ("seismic hazard", "rf", 10, 0, "mix"),
    ("seismic hazard", "tr", 5, 1, "mix"),
    ("seismic hazard", "cnn", 0, 3, "mix"),     # novel in test
    ("seismic hazard", "fe", 4, 0, "sci"),
    ("crop yield", "rf", 14, 2, "mix"),
    ("crop yield", "gnn", 0, 3, "mix"),         # novel in test
    ("crop yield", None, 1, 0, "sci"),
    ("alloy design", "gnn", 9, 2, "mix"),
    ("alloy design", "tr", 8, 2, "mix"),
    ("alloy design", "rl", 4, 1, "mix"),
    ("alloy design", "ms", 2, 0, "sci"),
    ("benchmark leaderboard", "cnn", 6, 0, "ai"),
    ("benchmark leaderboard", "tr", 4, 1, "ai"),
    ("benchmark leaderboard", "ms", 2, 1, "ai"),
    (None, None, 3, 0, "sci"),                  # no aspects at all
]

NOVEL_TEST_LINKS = [
    ["protein folding", "tr"],
    ["drug candidate screening", "cnn"],
    ["seismic hazard", "cnn"],
    ["crop yield", "gnn"],
]

TRAIN_YEARS = [2016, 2017, 2018, 2019, 2020, 2021, 2022]
TEST_YEARS = [2023, 2024]


def make_records():
    rng = random.Random(7)
    records = []
    n = 0
    for family, method, n_train, n_test, venues in PLAN:
        for split_n, years in ((n_train, TRAIN_YEARS), (n_test, TEST_YEARS)):
            for i in range(split_n):
                n += 1
                year = years[(n + i) % len(years)]
                if venues == "sci":
                    venue = SCI_VENUES[n % len(SCI_VENUES)]
                elif venues == "ai":
                    venue = AI_VENUES[n % len(AI_VENUES)]
                else:
                    pool = SCI_VENUES if n % 3 else AI_VENUES
                    venue = pool[n % len(pool)]
                if family is None:
                    title = f"Field notes on laboratory workflow, part {i + 1}"
                    abstract = ("We describe shared instrument scheduling "
                                "and sample custody practices. No modelling "
                                f"is attempted in report {i + 1}.")
                else:
                    noun, lead, fillers = FAMILIES[family]
                    filler = fillers[(n + i) % len(fillers)]
                    if method is None:
                        title = f"Open problems in {noun} ({i + 1})"
                        abstract = (f"{lead} We survey {family} work and "
                                    f"list open questions. {filler}")
                    else:
                        trigger, desc = METHODS[method]
                        title = f"{noun.capitalize()} with {desc} ({i + 1})"
                        abstract = (f"{lead} We address {family} using "
                                    f"{trigger} methods trained on curated "
                                    f"data. {filler}")
                records.append({
                    "id": f"pub-{n:05d}",
                    "title": title,
                    "abstract": abstract,
                    "venue": venue,
                    "year": year,
                })
    rng.shuffle(records)
    return records


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    records = make_records()
    n_train = sum(1 for r in records if r["year"] <= 2022)
    with open(OUT / "corpus.jsonl", "w", encoding="utf-8") as f:
        f.write(json.dumps({"format": "sciatlas-corpus", "version": 1}) + "\n")
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    (OUT / "venue_map.json").write_text(
        json.dumps(VENUE_MAP, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    config = {
        "seed": 0,
        "split_year": 2022,
        "gen": {"kind": "mock"},
        "embed": {"kind": "hashing", "dim": 128},
        "clustering": {"min_cluster_size": 10, "min_samples": 5,
                       "n_neighbors": 10},
        "atlas": {"min_edge_weight": 1},
        "predict": {"n2v_dim": 64, "n2v_walks_per_node": 10,
                    "n2v_walk_length": 40, "n2v_window": 5, "n2v_epochs": 3},
    }
    (OUT / "config.json").write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    manifest = {
        "records": len(records),
        "train": n_train,
        "test": len(records) - n_train,
        "split_year": 2022,
        "families": sorted(k for k in FAMILIES),
        "novel_test_links": NOVEL_TEST_LINKS,
        "generator": "tools/make_mini_corpus.py",
    }
    (OUT / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{len(records)} records ({n_train} train / "
          f"{len(records) - n_train} test) -> {OUT}")


if __name__ == "__main__":
    main()
