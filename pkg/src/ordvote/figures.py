"""Static renderings of the report tables.

Everything draws through the Agg backend into files; no display is ever
required.  Colors stay in greyscale so cluster identity reads as shade
order, which survives both printing and relabeling.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import BiasReport, MembershipMatrix, PerformerEffectRow


def _grey_levels(k: int) -> list[str]:
    if k == 1:
        return ["0.35"]
    return [str(0.15 + 0.7 * i / (k - 1)) for i in range(k)]


def plot_membership(member: MembershipMatrix, path) -> None:
    """Stacked horizontal bars: one row per voter, shades are clusters."""
    mat = member.matrix
    v, k = mat.shape
    fig, ax = plt.subplots(figsize=(7, max(2.0, 0.28 * v + 1.2)))
    left = np.zeros(v)
    ys = np.arange(v)
    for c, shade in enumerate(_grey_levels(k)):
        ax.barh(ys, mat[:, c], left=left, color=shade, edgecolor="white",
                linewidth=0.4, label=f"cluster {c + 1}")
        left += mat[:, c]
    ax.set_yticks(ys, member.voters)
    ax.invert_yaxis()
    ax.set_xlim(0, 1)
    ax.set_xlabel("posterior membership probability")
    ax.legend(loc="lower right", fontsize=8, framealpha=0.9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_exceedance(report: BiasReport, path) -> None:
    """Standardized pair effects with 95% bars and the screening band."""
    n = len(report.rows)
    means = np.array([r.mean for r in report.rows])
    lo = np.array([r.q025 for r in report.rows])
    hi = np.array([r.q975 for r in report.rows])
    flagged = np.array([r.p_pos > 0.5 or r.p_neg > 0.5 for r in report.rows])
    xs = np.arange(n)
    fig, ax = plt.subplots(figsize=(max(6.0, 0.05 * n + 4.0), 4.2))
    ax.vlines(xs, lo, hi, color="0.75", linewidth=0.7)
    ax.plot(xs[~flagged], means[~flagged], "o", color="0.45", markersize=2.5)
    if flagged.any():
        ax.plot(xs[flagged], means[flagged], "o", color="black", markersize=3.5,
                label=f"P(beyond threshold) > 0.5: {int(flagged.sum())} pairs")
        ax.legend(loc="upper right", fontsize=8)
    for y in (report.threshold, -report.threshold):
        ax.axhline(y, color="0.2", linestyle="--", linewidth=0.8)
    ax.set_xlabel("observed pair (voter, performer order)")
    ax.set_ylabel("standardized pair effect")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_performer_effects(rows: list[PerformerEffectRow], path) -> None:
    """One panel per cluster: per-performer effect means with 95% bars."""
    clusters = sorted({r.cluster for r in rows})
    performers = sorted({r.performer for r in rows})
    k = len(clusters)
    fig, axes = plt.subplots(
        1, k, figsize=(3.2 * k + 1.0, max(2.5, 0.25 * len(performers) + 1.2)),
        sharey=True, squeeze=False,
    )
    ys = np.arange(len(performers))
    index = {p: i for i, p in enumerate(performers)}
    for ax, c in zip(axes[0], clusters):
        sub = [r for r in rows if r.cluster == c]
        y = np.array([index[r.performer] for r in sub])
        ax.hlines(y, [r.q025 for r in sub], [r.q975 for r in sub], color="0.7", linewidth=1.0)
        ax.hlines(y, [r.q25 for r in sub], [r.q75 for r in sub], color="0.35", linewidth=2.2)
        ax.plot([r.mean for r in sub], y, "o", color="black", markersize=3)
        ax.axvline(0.0, color="0.2", linestyle=":", linewidth=0.8)
        ax.set_title(f"cluster {c}", fontsize=10)
        ax.set_xlabel("effect")
    axes[0][0].set_yticks(ys, performers)
    axes[0][0].invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
