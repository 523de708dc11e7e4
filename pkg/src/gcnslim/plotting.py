"""Figures written next to the CSV/JSON reports."""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_training_curves(report, path, title: str = "") -> Path:
    """Train loss and validation metrics per epoch."""
    epochs = report.curve("epoch")
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_met) = plt.subplots(1, 2, figsize=(8, 3))
        ax_loss.plot(epochs, report.curve("loss"), color="0.2")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("mean batch loss")
        ok = np.isfinite(report.curve("ndcg10"))
        ax_met.plot(epochs[ok], report.curve("recall10")[ok], marker=".", label="Recall@10")
        ax_met.plot(epochs[ok], report.curve("ndcg10")[ok], marker=".", label="NDCG@10")
        if report.best_epoch:
            ax_met.axvline(report.best_epoch, color="0.5", ls="--", lw=0.8)
        ax_met.set_xlabel("epoch")
        ax_met.set_ylabel("validation")
        ax_met.legend()
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def _group(rows, key):
    groups = defaultdict(list)
    for r in rows:
        if r.get("status") == "ok":
            groups[r["variant"]].append(r[key])
    return groups


def plot_ablation(rows: list[dict], path, metric_prefix: str = "test") -> Path:
    """Mean (and per-seed spread) of Recall@10 and NDCG@10 for each variant."""
    order = list(dict.fromkeys(r["variant"] for r in rows if r.get("status") == "ok"))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(max(6, 1.1 * len(order) + 2), 3.2))
        for ax, name in zip(axes, ("recall10", "ndcg10")):
            vals = _group(rows, f"{metric_prefix}_{name}")
            means = [np.mean(vals[v]) for v in order]
            err = [np.std(vals[v]) if len(vals[v]) > 1 else 0.0 for v in order]
            ax.bar(range(len(order)), means, yerr=err, color="0.6", edgecolor="0.2", capsize=3)
            lo = min((min(vals[v]) for v in order), default=0.0)
            hi = max((max(vals[v]) for v in order), default=1.0)
            pad = max((hi - lo) * 0.5, 1e-3)
            ax.set_ylim(max(0.0, lo - pad), hi + pad)
            ax.set_xticks(range(len(order)))
            ax.set_xticklabels(order, rotation=30, ha="right")
            ax.set_ylabel(f"{metric_prefix} {'Recall@10' if name == 'recall10' else 'NDCG@10'}")
        return _save(fig, path)


def plot_training_time(rows: list[dict], path) -> Path:
    """Wall-clock seconds to the best validation epoch per variant."""
    times = _group(rows, "train_seconds")
    order = list(times)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(order) + 2), 3))
        ax.bar(range(len(order)), [np.mean(times[v]) for v in order], color="0.45")
        ax.set_xticks(range(len(order)))
        ax.set_xticklabels(order, rotation=30, ha="right")
        ax.set_ylabel("seconds to best epoch")
        return _save(fig, path)


def plot_sweep(rows: list[dict], param: str, path, metric_prefix: str = "test") -> Path | None:
    """Metric against one swept hyperparameter (e.g. ``K`` or ``alpha``)."""
    pts = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r.get("status") == "ok" and r.get(param) is not None:
            for name in ("recall10", "ndcg10"):
                pts[name][float(r[param])].append(r[f"{metric_prefix}_{name}"])
    if len({x for d in pts.values() for x in d}) < 2:
        return None
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7, 3))
        for ax, name in zip(axes, ("recall10", "ndcg10")):
            xs = sorted(pts[name])
            ys = [np.mean(pts[name][x]) for x in xs]
            ax.plot(xs, ys, marker="o", color="0.2")
            if param in ("lam", "alpha") and min(xs) > 0 and max(xs) / min(xs) > 20:
                ax.set_xscale("log")
            ax.set_xlabel("lambda" if param == "lam" else param)
            ax.set_ylabel(f"{metric_prefix} {'Recall@10' if name == 'recall10' else 'NDCG@10'}")
            if all(math.isfinite(y) for y in ys):
                ax.margins(y=0.2)
        return _save(fig, path)
