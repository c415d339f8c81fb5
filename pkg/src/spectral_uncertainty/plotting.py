"""Figures written next to the tabular report: score densities and distance CDFs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from matplotlib.figure import Figure
from scipy.stats import gaussian_kde

PNG_META = {"Software": None}


def _density(ax, values: np.ndarray, grid: np.ndarray, label: str, color: str) -> None:
    if values.size >= 2 and np.ptp(values) > 0:
        try:
            density = gaussian_kde(values)(grid)
        except np.linalg.LinAlgError:
            pass
        else:
            ax.plot(grid, density, color=color, label=f"{label} (n={values.size})")
            ax.fill_between(grid, density, color=color, alpha=0.15)
            return
    # a point mass has no density; mark its location instead
    for v in np.unique(values):
        ax.axvline(v, color=color, linestyle="--", label=f"{label} (n={values.size}, constant)")


def plot_score_densities(
    columns: Mapping[str, tuple[Sequence[float], Sequence[int]]],
    path: str | Path,
    *,
    positive: str = "positive",
    negative: str = "negative",
    titles: Mapping[str, str] | None = None,
) -> Path:
    """One panel per method with kernel density estimates of scores split by label."""
    titles = titles or {}
    k = len(columns)
    fig = Figure(figsize=(4.0 * k, 3.2), constrained_layout=True)
    axes = fig.subplots(1, k, squeeze=False)[0]
    for ax, (method, (scores, labels)) in zip(axes, columns.items()):
        s = np.asarray(scores, dtype=float)
        y = np.asarray(labels, dtype=int)
        lo, hi = (s.min(), s.max()) if s.size else (0.0, 1.0)
        pad = 0.1 * (hi - lo) if hi > lo else 0.5
        grid = np.linspace(lo - pad, hi + pad, 256)
        _density(ax, s[y == 1], grid, positive, "tab:red")
        _density(ax, s[y == 0], grid, negative, "tab:blue")
        ax.set_title(titles.get(method, method), fontsize=10)
        ax.set_xlabel("uncertainty (nats)")
        ax.set_ylabel("density")
        ax.legend(fontsize=7)
    path = Path(path)
    fig.savefig(path, dpi=120, metadata=PNG_META)
    return path


def plot_distance_cdf(grid: Sequence[float], cdf: Sequence[float], path: str | Path, *, label: str = "") -> Path:
    fig = Figure(figsize=(4.5, 3.2), constrained_layout=True)
    ax = fig.subplots()
    ax.step(grid, cdf, where="post", color="tab:green")
    ax.set_xlabel("pairwise L2 distance between answer embeddings")
    ax.set_ylabel("cumulative fraction of pairs")
    ax.set_ylim(0.0, 1.02)
    ax.grid(alpha=0.3)
    if label:
        ax.set_title(label, fontsize=10)
    path = Path(path)
    fig.savefig(path, dpi=120, metadata=PNG_META)
    return path
