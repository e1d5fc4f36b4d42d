"""Figures written next to the CSV/TSV reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

REFERENCE_SECONDS = {256: 0.094, 384: 0.198, 512: 0.464}  # Tesla A100, per image


def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_loss_curve(history, path, lam=10.0):
    """history rows: (iteration, content, style, total)."""
    its = [r[0] for r in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(its, [r[3] for r in history], label="total", color="k")
    ax.plot(its, [r[1] for r in history], label="content")
    ax.plot(its, [lam * r[2] for r in history], label=f"{lam:g} x style")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_bench(rows, path):
    """rows: (size, mean_seconds, std_seconds)."""
    sizes = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(sizes, [r[1] for r in rows], yerr=[r[2] for r in rows], marker="o", capsize=3,
                label="this machine")
    ref = [(s, REFERENCE_SECONDS[s]) for s in sizes if s in REFERENCE_SECONDS]
    if ref:
        ax.plot(*zip(*ref), ls="--", marker="s", color="grey", label="reference (A100)")
    ax.set_xticks(sizes)
    ax.set_xticklabels([f"{s}x{s}" for s in sizes])
    ax.set_ylabel("seconds per image")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3, which="both")
    return _finish(fig, path)
