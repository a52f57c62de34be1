"""Figure rendering for evaluation outputs (headless, files only).

Four standard figures per evaluated model: lateral-deviation histograms by
mode, the row-normalized confusion matrix, label-timing histograms, and a
per-tick probability trace over one episode.
"""

from __future__ import annotations

import os
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .domain import ModeLabel
from .evaluation import LATERAL_HIST_BIN, EvalReport

_MODE_COLORS = {
    ModeLabel.LANE_KEEP: "#1f77b4",
    ModeLabel.PREPARE: "#ff7f0e",
    ModeLabel.LANE_CHANGE: "#2ca02c",
}


def _finish(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_lateral_distributions(report: EvalReport, path: str) -> str:
    """Overlaid per-mode histograms of lateral deviation from lane center."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for mode in ModeLabel:
        samples = report.distributions.lateral[mode]
        if len(samples) == 0:
            continue
        edges, counts = report.distributions.histogram(mode)
        density = counts / max(counts.sum() * LATERAL_HIST_BIN, 1e-12)
        ax.stairs(density, edges, label=mode.short, color=_MODE_COLORS[mode], fill=True, alpha=0.45)
    ax.set_xlabel("lateral deviation from lane center [m]")
    ax.set_ylabel("density")
    d, p = report.ks_result
    ax.set_title(f"Lateral deviation by mode (KS LK-vs-PREP: D={d:.3f}, p={p:.1e})")
    ax.legend()
    return _finish(fig, path)


def plot_confusion(report: EvalReport, path: str) -> str:
    """Row-normalized confusion matrix heatmap (rows = true mode)."""
    conf = report.accuracy.confusion
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    im = ax.imshow(conf, vmin=0.0, vmax=1.0, cmap="Blues")
    names = [m.short for m in ModeLabel]
    ax.set_xticks(range(len(names)), names)
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted mode")
    ax.set_ylabel("true mode")
    for i in range(conf.shape[0]):
        for j in range(conf.shape[1]):
            ax.text(
                j,
                i,
                f"{conf[i, j]:.3f}",
                ha="center",
                va="center",
                color="white" if conf[i, j] > 0.5 else "black",
            )
    ax.set_title(f"{report.algo}: overall accuracy {report.overall_accuracy:.3f}")
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _finish(fig, path)


def plot_timing(report: EvalReport, path: str) -> str:
    """Histograms of preparation time and the two baseline lead times."""
    summary = report.timing_summary()
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    series = [
        ("T_P", report.timing.t_p),
        ("dT_P", report.timing.dt_p),
        ("dT_LC", report.timing.dt_lc),
    ]
    for ax, (name, samples) in zip(axes, series):
        arr = np.asarray(samples, dtype=float)
        if len(arr):
            lo, hi = float(arr.min()), float(arr.max())
            # 30 bins over a span of a few ulp collide into zero-width edges
            # (numpy refuses); render near-identical samples on a ±0.5 s
            # window, matching numpy's own widening of an exactly-zero span.
            span = (lo - 0.5, hi + 0.5) if hi - lo < 1e-9 else (lo, hi)
            ax.hist(arr, bins=30, range=span, color="#1f77b4", alpha=0.8)
            mean, std, n = summary[name]
            ax.axvline(mean, color="red", linestyle="--")
            ax.set_title(f"{name}: mean={mean:.2f}s std={std:.2f} n={n}")
        else:
            ax.set_title(f"{name}: no samples")
        ax.set_xlabel("seconds")
    axes[0].set_ylabel("count")
    return _finish(fig, path)


def plot_probability_trace(
    rows: np.ndarray, path: str, title: Optional[str] = None
) -> str:
    """Mode probabilities over one episode with the true mode shaded behind."""
    fig, ax = plt.subplots(figsize=(9, 3.8))
    t = rows[:, 0]
    truth = rows[:, -1].astype(int)
    # shade true-mode spans
    start = 0
    for i in range(1, len(truth) + 1):
        if i == len(truth) or truth[i] != truth[start]:
            ax.axvspan(
                t[start],
                t[i - 1],
                color=_MODE_COLORS[ModeLabel(truth[start])],
                alpha=0.12,
                linewidth=0,
            )
            start = i
    for mode in ModeLabel:
        ax.plot(t, rows[:, 1 + int(mode)], label=f"p({mode.short})", color=_MODE_COLORS[mode])
    ax.set_xlabel("time [s]")
    ax.set_ylabel("probability")
    ax.set_ylim(-0.02, 1.02)
    if title:
        ax.set_title(title)
    ax.legend(loc="center right")
    return _finish(fig, path)


def render_figures(
    report: EvalReport,
    prob_rows: Optional[np.ndarray],
    out_dir: str,
    prefix: str,
) -> list[str]:
    """Write the standard figure set; returns the created file paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = [
        plot_lateral_distributions(
            report, os.path.join(out_dir, f"{prefix}_lateral_dev.png")
        ),
        plot_confusion(report, os.path.join(out_dir, f"{prefix}_confusion.png")),
        plot_timing(report, os.path.join(out_dir, f"{prefix}_timing.png")),
    ]
    if prob_rows is not None:
        paths.append(
            plot_probability_trace(
                prob_rows,
                os.path.join(out_dir, f"{prefix}_probability_trace.png"),
                title=f"{report.algo}: per-tick mode probabilities",
            )
        )
    return paths
