"""Matplotlib renderings of report documents and study summaries."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_REGION_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"]


def funnel_figure(doc: dict, method: str, log_x: bool = False):
    """Subgroup effects against subgroup size with homogeneity bands."""
    points = doc["points"]
    sizes = np.asarray([p["n"] for p in points])
    effects = np.asarray([p["effect"] for p in points])
    fig, ax = plt.subplots(figsize=(8.0, 5.0))
    ax.scatter(sizes, effects, s=9, alpha=0.45, color="#444444", linewidths=0, zorder=3)
    ax.axhline(doc["overall"]["ate"], linestyle="--", color="black", linewidth=1.2, zorder=2)

    regions = [r for r in doc["regions"] if r["method"] == method]
    for idx, reg in enumerate(sorted(regions, key=lambda r: r["s_level"])):
        curve = np.asarray(reg["curve"], dtype=np.float64)
        color = _REGION_COLORS[idx % len(_REGION_COLORS)]
        label = f"S = {reg['s_level']:g}"
        ax.plot(curve[:, 0], curve[:, 1], color=color, linewidth=1.1, label=label)
        ax.plot(curve[:, 0], curve[:, 2], color=color, linewidth=1.1)
    if log_x:
        ax.set_xscale("log")
    ax.set_xlabel("subgroup size")
    ax.set_ylabel("subgroup treatment effect")
    title = f"{len(points)} subgroups; bands: {method}"
    ax.set_title(title)
    if regions:
        ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    return fig


def ecdf_figure(groups: list[dict]):
    """Empirical p-value distribution functions against the diagonal.

    ``groups`` entries carry keys label, ecdf_grid, ecdf.
    """
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    ax.plot([0, 1], [0, 1], color="#999999", linestyle=":", linewidth=1.0)
    for g in groups:
        ax.step(g["ecdf_grid"], g["ecdf"], where="post", label=g["label"], linewidth=1.3)
    ax.set_xlabel("p-value")
    ax.set_ylabel("empirical distribution function")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False, fontsize=9, loc="lower right")
    fig.tight_layout()
    return fig


def proportion_figure(entries: list[dict]):
    """Bar chart of the proportion of p-values below 0.1 per group.

    ``entries`` carry keys label, proportion, se.
    """
    fig, ax = plt.subplots(figsize=(max(6.0, 0.7 * len(entries) + 2), 4.5))
    xs = np.arange(len(entries))
    props = [e["proportion"] for e in entries]
    errs = [2 * e["se"] for e in entries]
    ax.bar(xs, props, yerr=errs, capsize=3, color="#6699cc")
    ax.axhline(0.1, color="#999999", linestyle=":", linewidth=1.0)
    ax.set_xticks(xs)
    ax.set_xticklabels([e["label"] for e in entries], rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("proportion of p < 0.1")
    fig.tight_layout()
    return fig


def save_figure(fig, path, dpi: int = 130):
    """Write a PNG without volatile metadata so reruns are byte-identical."""
    fig.savefig(path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)
