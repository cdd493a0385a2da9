"""PNG figures for benchmark and timing reports (Agg backend, no display)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
    "legend.frameon": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_features(rows, path):
    """Grouped bars of full-frame versus strip extraction time per resolution."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        labels = [f"{r['width']}x{r['height']}" for r in rows]
        x = np.arange(len(rows))
        ax.bar(x - 0.2, [r["full_ms"] for r in rows], 0.4, label="full frame")
        ax.bar(x + 0.2, [r["region_ms"] for r in rows], 0.4, label="overlap strip")
        for xi, r in zip(x, rows):
            ax.annotate(f"{r['ratio']:.2f}x", (xi + 0.2, r["region_ms"]), ha="center", va="bottom", fontsize=8)
        ax.set_xticks(x, labels)
        ax.set_ylabel("extraction time [ms]")
        ax.legend()
        return _save(fig, path)


def plot_match(rows, path):
    """Recall and candidate count against the number of probes."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        t = [r["probes"] for r in rows]
        ax.plot(t, [r["recall"] for r in rows], "o-", label="recall")
        ax.axhline(0.9, color="0.5", ls="--", lw=0.8)
        ax.set_xscale("log", base=2)
        ax.set_xlabel("probes per table")
        ax.set_ylabel("recall of exact nearest neighbour")
        ax.set_ylim(0, 1.05)
        ax2 = ax.twinx()
        ax2.plot(t, [r["mean_candidates"] for r in rows], "s:", color="C1", label="candidates / query")
        ax2.set_ylabel("candidates per query")
        ax2.grid(False)
        lines = ax.get_lines()[:1] + ax2.get_lines()
        ax.legend(lines, [ln.get_label() for ln in lines], loc="lower right")
        return _save(fig, path)


def plot_pipeline(rows, path):
    """Per-frame time against camera count, one line per executor setting."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        keys = sorted({(r["mode"], r["frames_in_flight"]) for r in rows}, key=lambda k: (k[0] != "serial", k[1]))
        for mode, f in keys:
            sel = sorted((r for r in rows if r["mode"] == mode and r["frames_in_flight"] == f),
                         key=lambda r: r["cameras"])
            label = "serial" if mode == "serial" else f"pipelined, {f} in flight"
            ax.plot([r["cameras"] for r in sel], [r["ms_per_frame"] for r in sel], "o-", label=label)
        ax.set_xlabel("cameras")
        ax.set_ylabel("time per frame [ms]")
        ax.legend(fontsize=8)
        return _save(fig, path)


def plot_stage_timings(summary: dict, path):
    """Horizontal bars of mean stage latency with p99 whiskers."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        stages = list(summary)
        mean = np.array([summary[s][0] for s in stages]) * 1e-6
        p99 = np.array([summary[s][2] for s in stages]) * 1e-6
        y = np.arange(len(stages))
        ax.barh(y, mean, xerr=[np.zeros_like(mean), np.maximum(p99 - mean, 0)], capsize=3)
        ax.set_yticks(y, stages)
        ax.invert_yaxis()
        ax.set_xlabel("latency [ms] (bar: mean, whisker: p99)")
        return _save(fig, path)
