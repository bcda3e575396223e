"""Generate frozen reference fixtures under tests/data/.

Each fixture is computed by an independent implementation (sklearn's
HDBSCAN, statsmodels OLS, spreadsheet-style tf-idf) and frozen to JSON
or .npy, so the tests compare the package against values it did not
produce. Rerun only when a fixture is deliberately redesigned; the
expected values must come from the reference tools, never from the
package itself.

Requires statsmodels (dev-only; not a package dependency).
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import statsmodels.api as sm
from sklearn.cluster import HDBSCAN as SkHDBSCAN

OUT = Path(__file__).resolve().parent.parent / "tests" / "data"


def pairwise(points: np.ndarray) -> np.ndarray:
    # Gram-matrix euclidean distances, the same arithmetic route the
    # package takes; sklearn consumes it as a precomputed metric so the
    # reference labels cannot differ through distance rounding.
    sq = np.sum(points * points, axis=1)
    dist = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    np.maximum(dist, 0.0, out=dist)
    np.sqrt(dist, out=dist)
    np.fill_diagonal(dist, 0.0)
    return dist


def hdbscan_fixture() -> None:
    rng = np.random.default_rng(42)
    blobs = [
        rng.normal((0.0, 0.0), 1.2, size=(60, 2)),
        rng.normal((40.0, 5.0), 1.2, size=(55, 2)),
        rng.normal((-35.0, 30.0), 1.2, size=(45, 2)),
        rng.normal((10.0, -45.0), 1.2, size=(25, 2)),
    ]
    noise = rng.uniform(-60.0, 60.0, size=(15, 2))
    points = np.vstack(blobs + [noise]).astype(np.float64)
    order = rng.permutation(len(points))
    points = points[order]

    ref = SkHDBSCAN(min_cluster_size=20, min_samples=10,
                    metric="precomputed").fit(pairwise(points))
    labels = ref.labels_.astype(int)
    n_clusters = len(set(labels[labels >= 0]))
    assert n_clusters == 4, f"expected 4 reference clusters, got {n_clusters}"

    np.save(OUT / "hdbscan_points.npy", points)
    payload = {
        "min_cluster_size": 20,
        "min_samples": 10,
        "n_clusters": n_clusters,
        "labels": labels.tolist(),
    }
    (OUT / "hdbscan_expected.json").write_text(
        json.dumps(payload) + "\n", encoding="utf-8")
    print(f"hdbscan: {n_clusters} clusters, {int((labels < 0).sum())} noise")


def regression_fixture() -> None:
    rng = np.random.default_rng(2024)
    n = 30
    x = rng.integers(20, 400, size=n).astype(np.float64)
    y = np.round(0.32 * x + 4.0 + rng.normal(0.0, 6.0, size=n))
    np.clip(y, 0.0, None, out=y)
    y[3] = 0.32 * x[3] + 90.0    # planted above the band
    y[17] = 0.32 * x[17] + 70.0
    y[8] = 0.0                    # planted below
    y[25] = max(0.0, 0.32 * x[25] - 80.0)

    blocks = {}
    for name, design, dof_drop in (("with_intercept", sm.add_constant(x), 2),
                                   ("through_origin", x.reshape(-1, 1), 1)):
        fit = sm.OLS(y, design).fit()
        ci = fit.get_prediction(design).conf_int(alpha=0.05)
        lower, upper = ci[:, 0], ci[:, 1]
        well = [i for i in range(n) if y[i] > upper[i]]
        under = [i for i in range(n) if y[i] < lower[i]]
        if name == "with_intercept":
            intercept, slope = fit.params
            assert 3 in well and 17 in well, well
            assert 8 in under and 25 in under, under
        else:
            intercept, slope = 0.0, fit.params[0]
        blocks[name] = {
            "slope": float(slope),
            "intercept": float(intercept),
            "band_lower": lower.tolist(),
            "band_upper": upper.tolist(),
            "well": well,
            "under": under,
        }
    payload = {"totals": x.tolist(), "ai_counts": y.tolist(), **blocks}
    (OUT / "regression_expected.json").write_text(
        json.dumps(payload) + "\n", encoding="utf-8")
    print(f"regression: slope {blocks['with_intercept']['slope']:.4f}, "
          f"well {blocks['with_intercept']['well']}, "
          f"under {blocks['with_intercept']['under']}")


def tfidf_fixture() -> None:
    docs = [
        "protein folding folding dynamics model",
        "climate model projection model bias",
        "galaxy survey morphology survey image",
        "protein docking affinity model",
        "yield forecast climate weather signal",
    ]
    # Independent spreadsheet-style pass: raw counts, ln(N/df), ties
    # resolved alphabetically.
    n_docs = len(docs)
    counts = []
    df: dict[str, int] = {}
    for doc in docs:
        c: dict[str, int] = {}
        for tok in doc.split():
            c[tok] = c.get(tok, 0) + 1
        counts.append(c)
        for tok in c:
            df[tok] = df.get(tok, 0) + 1
    expected = []
    for c in counts:
        scored = [(tok, cnt * math.log(n_docs / df[tok]))
                  for tok, cnt in c.items()]
        scored.sort(key=lambda item: (-item[1], item[0]))
        expected.append([tok for tok, _ in scored[:3]])
    (OUT / "tfidf_expected.json").write_text(
        json.dumps({"docs": docs, "k": 3, "top_terms": expected}) + "\n",
        encoding="utf-8")
    print(f"tfidf: {expected[0]} ...")


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    hdbscan_fixture()
    regression_fixture()
    tfidf_fixture()


if __name__ == "__main__":
    main()
