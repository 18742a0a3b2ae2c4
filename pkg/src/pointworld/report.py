"""Report rendering: CSV tables and matplotlib figures written next to
the JSON artifacts each CLI stage produces."""

from __future__ import annotations

import csv
from pathlib import Path


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def write_csv(path, fieldnames, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fieldnames})


def alignment_figure(rows, path):
    """Per-frame scale, bias, and residual curves."""
    plt = _plt()
    frames = [r["frame"] for r in rows]
    fig, axes = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
    axes[0].plot(frames, [r["scale"] for r in rows], marker="o", ms=3)
    axes[0].set_ylabel("scale")
    axes[1].plot(frames, [r["bias"] for r in rows], marker="o", ms=3, color="tab:orange")
    axes[1].set_ylabel("bias [1/m]")
    axes[2].plot(frames, [r["residual"] for r in rows], marker="o", ms=3, color="tab:red")
    axes[2].set_ylabel("RMS residual")
    axes[2].set_xlabel("frame")
    axes[0].set_title("disparity alignment per frame")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cache_growth_figure(stats: dict, path):
    """Cache size against the store-everything baseline, per update."""
    plt = _plt()
    updates = stats["updates"]
    candidates = [u["candidates"] for u in updates]
    added = [u["added_hole"] + u["added_normal"] for u in updates]
    baseline = []
    size = []
    c_total = 0
    s_total = 0
    for c, a in zip(candidates, added):
        c_total += c
        s_total += a
        baseline.append(c_total)
        size.append(s_total)
    fig, ax = plt.subplots(figsize=(7, 4))
    x = range(len(updates))
    ax.plot(x, baseline, label="store everything", linestyle="--")
    ax.plot(x, size, label="culled cache")
    ax.set_xlabel("update")
    ax.set_ylabel("points")
    ax.set_title(f"cache growth (reduction {stats['reduction_ratio']:.1%})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def seam_figure(metrics: dict, path):
    """Frame-to-frame color deltas with clip-boundary transitions marked."""
    plt = _plt()
    deltas = metrics["per_transition"]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(range(len(deltas)), deltas, lw=1)
    for t in metrics["boundary_transitions"]:
        ax.axvline(t, color="tab:red", alpha=0.4, lw=1)
    if metrics["mean_within"] > 0:
        ax.axhline(metrics["mean_within"], color="tab:green", lw=1, linestyle="--",
                   label="within-clip mean")
        ax.axhline(1.5 * metrics["mean_within"], color="tab:orange", lw=1, linestyle=":",
                   label="1.5x threshold")
        ax.legend()
    ax.set_xlabel("transition (frame t to t+1)")
    ax.set_ylabel("mean |d rgb|")
    ax.set_title(f"seam profile (ratio {metrics['ratio']:.2f})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
