"""Figures written next to the delimited CLI output (Agg backend, PNG files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def convergence(series, path, title="best feasible latency"):
    """Step plot of best latency against evaluation count.

    ``series`` holds (evals, latency) pairs; a latency of None means no
    feasible design had been seen yet and is left blank.
    """
    fig, ax = plt.subplots(figsize=(6, 3.5))
    xs = [x for x, y in series if y is not None]
    ys = [y for x, y in series if y is not None]
    if xs:
        ax.step(xs, ys, where="post")
        ax.scatter(xs[-1:], ys[-1:], zorder=3)
    ax.set_xlabel("evaluations")
    ax.set_ylabel("latency (cycles)")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def compare_bars(kernels, speedups: dict, path):
    """Grouped bars of speedup per kernel, one group member per baseline."""
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(kernels) + 2), 3.5))
    n = max(1, len(speedups))
    width = 0.8 / n
    for j, (label, values) in enumerate(speedups.items()):
        xs = [i + j * width for i in range(len(kernels))]
        ax.bar(xs, values, width=width, label=label)
    ax.axhline(1.0, color="grey", lw=0.8)
    ax.set_xticks([i + width * (n - 1) / 2 for i in range(len(kernels))])
    ax.set_xticklabels(kernels, rotation=30, ha="right")
    ax.set_ylabel("speedup (baseline / ours)")
    ax.legend(fontsize="small")
    return _save(fig, path)


def token_series(per_iteration: dict, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    its = list(per_iteration)
    ax.bar(its, [per_iteration[i] for i in its])
    ax.set_xlabel("iteration")
    ax.set_ylabel("tokens")
    ax.set_title("tokens per iteration")
    return _save(fig, path)
