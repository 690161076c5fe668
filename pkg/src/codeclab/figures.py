"""Matplotlib renderings for the run report (PNG)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# no timestamps or version strings, so reruns are byte-identical
_META = {"Software": None}


def rate_metric_figure(curves, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    for c in curves:
        style = "--" if c.label.endswith("/CVE") else "-"
        ax.plot(c.bpp, c.metric, style, marker="o", label=c.label)
    ax.set_xscale("log")
    ax.set_xlabel("bpp")
    ax.set_ylabel("accuracy")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return Path(path)


def correlation_figure(names, matrix, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 5), dpi=100)
    im = ax.imshow(matrix, vmin=-1, vmax=1, cmap="RdBu_r")
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(names)), names, fontsize=8)
    for i in range(len(names)):
        for j in range(len(names)):
            ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center", va="center", fontsize=7)
    fig.colorbar(im, ax=ax)
    ax.set_title("Pearson correlation")
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return Path(path)
