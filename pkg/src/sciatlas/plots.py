"""Publication-quality figures for the atlas artifacts.

Three figure kinds: the 2D map of publications colored by category, the
degree histogram with a fitted log-normal overlay, and the per-cluster
total-versus-AI4Science scatter with its regression line and confidence
band. All output is SVG. Rendering is deterministic for a fixed seed:
the SVG hash salt is pinned and the creation date is suppressed, so two
runs of the same data produce byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")  # headless CLI tool; never a display backend

import matplotlib.pyplot as plt
import numpy as np

CATEGORY_COLORS = {
    "ai4science": "tab:green",
    "science_non_ai": "tab:orange",
    "ai_non_science": "tab:purple",
    "other": "0.8",
}
CATEGORY_LABELS = {
    "ai4science": "AI4Science",
    "science_non_ai": "science, no AI",
    "ai_non_science": "AI, non-science",
    "other": "other",
}


class PlotError(Exception):
    """Figure inputs missing or inconsistent."""


def categorize(extraction) -> str:
    """Map one publication's flags to a map color category."""
    if extraction.ai4science:
        return "ai4science"
    if extraction.is_scientific and not extraction.uses_ai:
        return "science_non_ai"
    if extraction.uses_ai and not extraction.is_scientific:
        return "ai_non_science"
    return "other"


def _save(fig, path, seed: int, stamp: str) -> None:
    plt.rcParams["svg.hashsalt"] = str(seed)
    fig.savefig(path, format="svg",
                metadata={"Date": None, "Description": stamp})
    plt.close(fig)


def plot_map(projection, categories: dict, path, seed: int = 0,
             stamp: str = "", title: str = "") -> None:
    """Scatter the 2D layout, one color per publication category.

    `categories` maps pub id -> category key; ids missing from it plot
    as "other". An empty category is legal (the legend keeps its entry
    so readers see the class exists with zero members).
    """
    coords = projection.coords
    ids = projection.ids
    if len(coords) == 0:
        raise PlotError("projection has no points")
    fig, ax = plt.subplots(figsize=(7.0, 6.0))
    for key in ("other", "science_non_ai", "ai_non_science", "ai4science"):
        mask = np.array([categories.get(i, "other") == key for i in ids])
        ax.scatter(coords[mask, 0], coords[mask, 1], s=8,
                   c=CATEGORY_COLORS[key], label=CATEGORY_LABELS[key],
                   alpha=0.8, linewidths=0)
    ax.set_xlabel("dimension 1")
    ax.set_ylabel("dimension 2")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", frameon=False, markerscale=2)
    fig.tight_layout()
    _save(fig, path, seed, stamp)


def _lognormal_pdf(x: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return np.zeros_like(x)
    return (np.exp(-((np.log(x) - mu) ** 2) / (2 * sigma**2))
            / (x * sigma * np.sqrt(2 * np.pi)))


def plot_degree_hist(panels: list, path, seed: int = 0, stamp: str = "") -> None:
    """Log-binned degree histograms, one panel per entry.

    Each panel is (title, degrees array, fit) where fit carries mu and
    sigma of the fitted log-normal (or None to skip the overlay). Zero
    degrees cannot enter log bins and are dropped from the histogram.
    """
    if not panels:
        raise PlotError("no histogram panels")
    fig, axes = plt.subplots(1, len(panels), figsize=(5.0 * len(panels), 4.0),
                             squeeze=False)
    for ax, (title, degrees, fit) in zip(axes[0], panels):
        degrees = np.asarray([d for d in degrees if d > 0], dtype=np.float64)
        if len(degrees) == 0:
            ax.set_title(f"{title} (no nonzero degrees)")
            continue
        lo, hi = degrees.min(), degrees.max()
        if hi <= lo:
            hi = lo * 1.5 + 1.0
        bins = np.logspace(np.log10(lo), np.log10(hi), 24)
        ax.hist(degrees, bins=bins, density=True, color="tab:blue",
                alpha=0.6, label="observed")
        if fit is not None and fit.sigma > 0:
            grid = np.logspace(np.log10(lo), np.log10(hi), 200)
            ax.plot(grid, _lognormal_pdf(grid, fit.mu, fit.sigma),
                    color="tab:red", lw=1.5,
                    label=f"log-normal ($\\mu$={fit.mu:.2f}, $\\sigma$={fit.sigma:.2f})")
        ax.set_xscale("log")
        ax.set_xlabel("degree")
        ax.set_ylabel("density")
        ax.set_title(title)
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, path, seed, stamp)


def plot_cluster_scatter(partition, totals: dict, ai_counts: dict,
                         path, seed: int = 0, stamp: str = "",
                         labels: dict | None = None, title: str = "") -> None:
    """Per-cluster total vs AI4Science counts with the regression band.

    Well-investigated clusters (above the band) plot blue, under-
    investigated ones red, the rest gray. The black line is the fitted
    regression; dashed lines bound the 95% confidence band.
    """
    cluster_ids = sorted(totals)
    if not cluster_ids:
        raise PlotError("no clusters to plot")
    xs = np.array([totals[c] for c in cluster_ids], dtype=np.float64)
    ys = np.array([ai_counts.get(c, 0) for c in cluster_ids], dtype=np.float64)
    well = set(partition.well)
    under = set(partition.under)
    colors = ["tab:blue" if c in well else "tab:red" if c in under else "0.6"
              for c in cluster_ids]
    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    ax.scatter(xs, ys, c=colors, s=30, zorder=3)
    grid = np.linspace(xs.min(), xs.max(), 100)
    line = partition.slope * grid + partition.intercept
    lower, upper = partition.band(grid)
    ax.plot(grid, line, color="black", lw=1.5, zorder=2, label="regression")
    ax.plot(grid, lower, color="black", lw=0.8, ls="--", zorder=2,
            label="95% CI band")
    ax.plot(grid, upper, color="black", lw=0.8, ls="--", zorder=2)
    if labels:
        for c, x, y in zip(cluster_ids, xs, ys):
            if c in well or c in under:
                ax.annotate(str(labels.get(c, c)), (x, y), fontsize=6,
                            xytext=(2, 2), textcoords="offset points")
    ax.set_xlabel("publications in cluster")
    ax.set_ylabel("AI4Science publications")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, path, seed, stamp)
