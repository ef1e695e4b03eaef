"""Figure rendering for CLI reports.

Figures are written as PNG with fixed metadata so identical inputs produce
byte-identical files. Matplotlib is imported lazily to keep plot-free CLI
invocations fast.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dynamics import Run, RunSet
from .mislabel import CurvePoint

_SAVE_KW = dict(dpi=120, metadata={"Software": "fluence"})


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def plot_trajectories(
    truth: RunSet,
    pred: RunSet,
    metric: str,
    out: str | Path,
    max_panels: int = 6,
) -> Path:
    """Overlay predicted and true trajectories for a few (run, test) pairs."""
    plt = _pyplot()
    pairs = []
    for run in truth:
        for tid in run.test_ids(metric):
            pairs.append((run, tid))
            if len(pairs) >= max_panels:
                break
        if len(pairs) >= max_panels:
            break
    ncols = min(3, max(1, len(pairs)))
    nrows = (len(pairs) + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(4 * ncols, 3 * nrows), squeeze=False)
    for ax, (run, tid) in zip(axes.flat, pairs):
        t = run.trajectory(tid, metric).values
        p = pred.get(run.run_id).trajectory(tid, metric).values
        steps = np.arange(1, t.size + 1)
        ax.plot(steps, t, label="observed", lw=1.6)
        ax.plot(steps, p, label="simulated", lw=1.2, ls="--")
        ax.set_title(f"{run.run_id} / {tid}", fontsize=9)
        ax.set_xlabel("step")
        ax.set_ylabel(metric)
    for ax in axes.flat[len(pairs) :]:
        ax.axis("off")
    if pairs:
        axes.flat[0].legend(fontsize=8)
    fig.tight_layout()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, **_SAVE_KW)
    plt.close(fig)
    return out


def plot_eval_report(reports: Mapping[str, Mapping], out: str | Path) -> Path:
    """Bar chart of MSE/MAE (with std whiskers) and Spearman per metric."""
    plt = _pyplot()
    metrics = sorted(reports)
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    for ax, stat in zip(axes, ("mse", "mae", "spearman")):
        vals = [reports[m].get(stat) for m in metrics]
        errs = [reports[m].get(f"{stat}_std") or 0.0 for m in metrics]
        xs = np.arange(len(metrics))
        shown = [(x, v, e) for x, v, e in zip(xs, vals, errs) if v is not None]
        if shown:
            ax.bar(
                [x for x, _, _ in shown],
                [v for _, v, _ in shown],
                yerr=[e for _, _, e in shown],
                capsize=3,
            )
        ax.set_xticks(xs)
        ax.set_xticklabels(metrics, fontsize=8)
        ax.set_title(stat)
    fig.tight_layout()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, **_SAVE_KW)
    plt.close(fig)
    return out


def plot_ablation(
    rows: Sequence[Mapping], out: str | Path, x_key: str = "value", group_key: str = "sweep"
) -> Path:
    """MSE versus swept value, one line per sweep kind."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    groups: dict[str, list] = {}
    for r in rows:
        groups.setdefault(str(r[group_key]), []).append(r)
    for name, rs in sorted(groups.items()):
        rs = sorted(rs, key=lambda r: r[x_key])
        ax.plot(
            [r[x_key] for r in rs],
            [r["mse"] for r in rs],
            marker="o",
            label=name,
        )
    ax.set_xlabel("swept value")
    ax.set_ylabel("all-steps MSE")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, **_SAVE_KW)
    plt.close(fig)
    return out


def plot_detection_curves(
    curves: Mapping[str, Sequence[CurvePoint]], out: str | Path
) -> Path:
    """Detection curves against the random-inspection diagonal."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.8))
    for name, pts in sorted(curves.items()):
        ax.plot([p.fraction for p in pts], [p.found for p in pts], marker="o", ms=3, label=name)
    ax.plot([0, 1], [0, 1], ls=":", c="gray", label="random expectation")
    ax.set_xlabel("fraction of data inspected")
    ax.set_ylabel("fraction of mislabelled found")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, **_SAVE_KW)
    plt.close(fig)
    return out
