"""Trajectory-prediction scoring: all-steps MSE/MAE, final-step Spearman,
and aggregation across held-out runs.

MSE/MAE are computed over the non-seeded window (steps order+1..T) and
aggregated with mean and population std over (run, test) pairs; Spearman is
computed per run across its test examples and aggregated over runs. The
report JSON records the alternative granularity as well.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .dynamics import Run, RunSet, Trajectory
from .errors import DegenerateRankingError, ValidationError


def _window(pred: Trajectory, truth: Trajectory, order: int) -> tuple[np.ndarray, np.ndarray]:
    if len(pred) != len(truth):
        raise ValidationError(
            f"length mismatch: prediction has {len(pred)} steps, truth has {len(truth)}"
        )
    if pred.metric != truth.metric:
        raise ValidationError(
            f"metric mismatch: prediction is {pred.metric!r}, truth is {truth.metric!r}"
        )
    n = int(order)
    if n < 0:
        raise ValidationError(f"order must be >= 0, got {n}")
    if n >= len(truth):
        raise ValidationError(
            f"empty evaluation window: order {n} leaves no steps of {len(truth)}"
        )
    return pred.values[n:], truth.values[n:]


def all_steps_mse(pred: Trajectory, truth: Trajectory, order: int = 0) -> float:
    """Mean squared per-step difference over steps order+1..T."""
    a, b = _window(pred, truth, order)
    d = a - b
    return float(np.mean(d * d))


def all_steps_mae(pred: Trajectory, truth: Trajectory, order: int = 0) -> float:
    """Mean absolute per-step difference over steps order+1..T."""
    a, b = _window(pred, truth, order)
    return float(np.mean(np.abs(a - b)))


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties assigned the average of their positions."""
    arr = np.asarray(values, dtype=np.float64)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(arr.size, dtype=np.float64)
    i = 0
    while i < arr.size:
        j = i
        while j + 1 < arr.size and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman_final_step(
    preds: Mapping[str, float], truths: Mapping[str, float]
) -> float:
    """Spearman rank correlation between predicted and true final scores.

    Ties receive average ranks; raises DegenerateRankingError when either
    side has zero rank variance.
    """
    if set(preds) != set(truths):
        raise ValidationError(
            "prediction and truth key sets differ: "
            f"{sorted(set(preds) ^ set(truths))[:5]}"
        )
    keys = sorted(preds)
    if len(keys) < 2:
        raise ValidationError(f"need >= 2 test examples, got {len(keys)}")
    rp = average_ranks([float(preds[k]) for k in keys])
    rt = average_ranks([float(truths[k]) for k in keys])
    rp = rp - rp.mean()
    rt = rt - rt.mean()
    vp = float(np.dot(rp, rp))
    vt = float(np.dot(rt, rt))
    if vp == 0.0 or vt == 0.0:
        raise DegenerateRankingError(
            "degenerate ranking: zero rank variance on one side"
        )
    return float(np.dot(rp, rt) / np.sqrt(vp * vt))


@dataclass(frozen=True)
class PairScore:
    """Scores for one (run, test example) trajectory pair."""

    run_id: str
    test_id: str
    metric: str
    mse: float
    mae: float
    pred_final: float
    true_final: float


def score_pair(
    run_id: str, pred: Trajectory, truth: Trajectory, order: int = 0
) -> PairScore:
    return PairScore(
        run_id=run_id,
        test_id=truth.test_id,
        metric=truth.metric,
        mse=all_steps_mse(pred, truth, order),
        mae=all_steps_mae(pred, truth, order),
        pred_final=pred.final(),
        true_final=truth.final(),
    )


def compare_runsets(
    pred: RunSet, truth: RunSet, metric: str, order: int = 0
) -> list[PairScore]:
    """Score every (run, test) trajectory of ``metric``; strict matching.

    Every truth trajectory must have a prediction with the same run_id and
    test_id. Extra predicted runs are ignored; extra trajectories within a
    matched run are not.
    """
    scores: list[PairScore] = []
    for truth_run in truth:
        pred_run = pred.get(truth_run.run_id)
        for tid in truth_run.test_ids(metric):
            t = truth_run.trajectory(tid, metric)
            p = pred_run.trajectory(tid, metric)
            scores.append(score_pair(truth_run.run_id, p, t, order))
    if not scores:
        raise ValidationError(f"no trajectories of metric {metric!r} to score")
    return scores


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())  # population std


@dataclass(frozen=True)
class EvalReport:
    """Aggregated scores: MSE/MAE over pairs, Spearman over runs."""

    metric: str
    mse: float
    mse_std: float
    mae: float
    mae_std: float
    spearman: float | None
    spearman_std: float | None
    n_pairs: int
    n_runs: int
    n_spearman_runs: int
    n_degenerate_runs: int
    mse_by_run: float
    mse_by_run_std: float
    mae_by_run: float
    mae_by_run_std: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "mse": self.mse,
            "mse_std": self.mse_std,
            "mae": self.mae,
            "mae_std": self.mae_std,
            "spearman": self.spearman,
            "spearman_std": self.spearman_std,
            "n_pairs": self.n_pairs,
            "n_runs": self.n_runs,
            "alt_granularity": {
                # per-run means aggregated over runs, for transparency about
                # which population the std describes
                "mse_by_run": self.mse_by_run,
                "mse_by_run_std": self.mse_by_run_std,
                "mae_by_run": self.mae_by_run,
                "mae_by_run_std": self.mae_by_run_std,
                "n_spearman_runs": self.n_spearman_runs,
                "n_degenerate_runs": self.n_degenerate_runs,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)


def aggregate(pairs: Sequence[PairScore]) -> EvalReport:
    """Aggregate pair scores into one report.

    MSE/MAE: mean and population std over all (run, test) pairs. Spearman:
    computed per run across its test examples at the final step, then mean
    and population std over runs; runs with fewer than two test examples or
    a degenerate ranking are skipped and counted.
    """
    # canonical order makes aggregation exactly permutation invariant
    pairs = sorted(pairs, key=lambda p: (p.run_id, p.test_id))
    if not pairs:
        raise ValidationError("aggregate: empty input")
    metrics = {p.metric for p in pairs}
    if len(metrics) != 1:
        raise ValidationError(f"aggregate: mixed metrics {sorted(metrics)}")
    mse, mse_std = _mean_std([p.mse for p in pairs])
    mae, mae_std = _mean_std([p.mae for p in pairs])

    by_run: dict[str, list[PairScore]] = {}
    for p in pairs:
        by_run.setdefault(p.run_id, []).append(p)
    run_mses = [float(np.mean([p.mse for p in ps])) for ps in by_run.values()]
    run_maes = [float(np.mean([p.mae for p in ps])) for ps in by_run.values()]
    mse_by_run, mse_by_run_std = _mean_std(run_mses)
    mae_by_run, mae_by_run_std = _mean_std(run_maes)

    rhos: list[float] = []
    degenerate = 0
    for ps in by_run.values():
        if len(ps) < 2:
            continue
        preds = {p.test_id: p.pred_final for p in ps}
        truths = {p.test_id: p.true_final for p in ps}
        try:
            rhos.append(spearman_final_step(preds, truths))
        except DegenerateRankingError:
            degenerate += 1
    if rhos:
        sp, sp_std = _mean_std(rhos)
    else:
        sp, sp_std = None, None
    return EvalReport(
        metric=pairs[0].metric,
        mse=mse,
        mse_std=mse_std,
        mae=mae,
        mae_std=mae_std,
        spearman=sp,
        spearman_std=sp_std,
        n_pairs=len(pairs),
        n_runs=len(by_run),
        n_spearman_runs=len(rhos),
        n_degenerate_runs=degenerate,
        mse_by_run=mse_by_run,
        mse_by_run_std=mse_by_run_std,
        mae_by_run=mae_by_run,
        mae_by_run_std=mae_by_run_std,
    )


def report_rows(report: EvalReport) -> list[tuple[str, str, float]]:
    """Long-format (metric, statistic, value) rows for plotting."""
    rows = [
        (report.metric, "mse", report.mse),
        (report.metric, "mse_std", report.mse_std),
        (report.metric, "mae", report.mae),
        (report.metric, "mae_std", report.mae_std),
    ]
    if report.spearman is not None:
        rows.append((report.metric, "spearman", report.spearman))
        rows.append((report.metric, "spearman_std", report.spearman_std))
    return rows
