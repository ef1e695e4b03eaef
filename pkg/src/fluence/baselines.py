"""Reference attribution baselines sharing the dynamics data model.

The per-id simulator learns one multiplicative and one additive scalar per
training example (first-order recurrence only); it cannot score ids outside
its fitted registry. TracIn-style methods consume precomputed gradient
dot-product dumps so they stay model-agnostic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .dynamics import Run, RunSet, Trajectory, _json_line
from .errors import (
    NumericalError,
    ParseError,
    UnknownExampleError,
    ValidationError,
)
from .simulator import SimulatorConfig
from .training import FitReport, run_training

DUMP_FORMAT = "gradient-dump-v1"


@dataclass
class SimfluenceParams:
    """Per-training-example scalar factors over a fixed id registry."""

    config: SimulatorConfig
    ids: tuple[str, ...]
    mul: np.ndarray  # multiplicative scalar per registered id
    add: np.ndarray  # additive scalar per registered id

    def __post_init__(self) -> None:
        if self.config.order != 1:
            raise ValidationError("per-id simulator is first-order only")
        self.ids = tuple(self.ids)
        self._index = {ex: i for i, ex in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise ValidationError("duplicate ids in registry")
        for name, arr in (("mul", self.mul), ("add", self.add)):
            if arr.shape != (len(self.ids),):
                raise ValidationError(f"{name} must have one entry per registered id")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} has non-finite entries")

    def index(self, train_id: str) -> int:
        try:
            return self._index[train_id]
        except KeyError:
            raise UnknownExampleError(
                f"example {train_id!r} was not seen during fitting"
            ) from None

    def factors(self, train_id: str) -> tuple[float, float]:
        i = self.index(train_id)
        return float(self.mul[i]), float(self.add[i])

    def batch_coefficients(self, batch: Sequence[str]) -> tuple[float, float]:
        """Left-to-right sums of per-example factors over a batch."""
        if len(batch) == 0:
            raise ValidationError("empty batch")
        alpha = 0.0
        beta = 0.0
        for ex in batch:
            i = self.index(ex)
            alpha += float(self.mul[i])
            beta += float(self.add[i])
        return alpha, beta


class _TabularTask:
    """Squared-error task over per-id scalars, CSR-style batch membership."""

    def __init__(self, indptr: np.ndarray, members: np.ndarray, y_prev: np.ndarray, y: np.ndarray, n_ids: int):
        self.indptr = indptr
        self.members = members
        self.y_prev = y_prev
        self.y = y
        self.n_ids = n_ids
        self.params = [np.zeros(n_ids), np.zeros(n_ids)]

    @property
    def n_targets(self) -> int:
        return int(self.y.size)

    def _gather(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lengths = self.indptr[idx + 1] - self.indptr[idx]
        flat = np.concatenate(
            [self.members[self.indptr[i] : self.indptr[i + 1]] for i in idx]
        )
        starts = np.zeros(idx.size, dtype=np.int64)
        np.cumsum(lengths[:-1], out=starts[1:])
        return flat, starts, lengths

    def predict(self, idx: np.ndarray) -> np.ndarray:
        mul, add = self.params
        flat, starts, _ = self._gather(idx)
        alpha = np.add.reduceat(mul[flat], starts)
        beta = np.add.reduceat(add[flat], starts)
        return alpha * self.y_prev[idx] + beta

    def loss_and_grads(self, idx: np.ndarray, scale: float) -> tuple[float, list[np.ndarray]]:
        mul, add = self.params
        flat, starts, lengths = self._gather(idx)
        alpha = np.add.reduceat(mul[flat], starts)
        beta = np.add.reduceat(add[flat], starts)
        yp = self.y_prev[idx]
        resid = alpha * yp + beta - self.y[idx]
        loss = scale * float(np.dot(resid, resid))
        w = 2.0 * scale * resid
        g_mul = np.bincount(flat, weights=np.repeat(w * yp, lengths), minlength=self.n_ids)
        g_add = np.bincount(flat, weights=np.repeat(w, lengths), minlength=self.n_ids)
        return loss, [g_mul, g_add]

    def minibatch_loss_and_grads(self, idx: np.ndarray) -> tuple[float, list[np.ndarray]]:
        return self.loss_and_grads(idx, 1.0 / idx.size)

    def full_data_loss(self) -> float:
        resid = self.predict(np.arange(self.n_targets)) - self.y
        return float(np.dot(resid, resid) / resid.size)


def _tabular_targets(runs: RunSet, metric: str, index: Mapping[str, int]):
    indptr = [0]
    members: list[int] = []
    y_prev: list[float] = []
    y: list[float] = []
    for run in runs:
        T = run.num_steps
        if T <= 1:
            raise ValidationError(f"run {run.run_id} has {T} steps; need more than 1")
        test_ids = run.test_ids(metric)
        if not test_ids:
            raise ValidationError(
                f"run {run.run_id} has no trajectories for metric {metric!r}"
            )
        step_members = [
            [index[ex] for ex in run.curriculum.batch(t)] for t in range(1, T + 1)
        ]
        for tid in test_ids:
            vals = run.trajectory(tid, metric).values
            for t in range(2, T + 1):
                members.extend(step_members[t - 1])
                indptr.append(len(members))
                y_prev.append(vals[t - 2])
                y.append(vals[t - 1])
    return (
        np.asarray(indptr, dtype=np.int64),
        np.asarray(members, dtype=np.int64),
        np.asarray(y_prev),
        np.asarray(y),
    )


def simfluence_fit(
    runs_train: RunSet,
    runs_val: RunSet,
    config: SimulatorConfig,
    on_epoch: Callable[[int, "SimfluenceParams", float, float], None] | None = None,
) -> tuple[SimfluenceParams, FitReport]:
    """Fit per-id factors with the same objective and optimizer defaults as
    the featurized fit. Ids appearing in the train or val curricula are
    registered; everything else stays unknown."""
    if config.order != 1:
        raise ValidationError("per-id simulator is first-order only")
    if len(runs_train) == 0:
        raise ValidationError("fit: empty training run set")
    if len(runs_val) == 0:
        raise ValidationError("fit: empty validation run set")
    ids = tuple(sorted(runs_train.train_ids() | runs_val.train_ids()))
    index = {ex: i for i, ex in enumerate(ids)}
    indptr, members, y_prev, y = _tabular_targets(runs_train, config.metric, index)
    task = _TabularTask(indptr, members, y_prev, y, len(ids))
    live = SimfluenceParams(config=config, ids=ids, mul=task.params[0], add=task.params[1])

    def val_fn() -> float:
        return simfluence_mean_rollout_mse(live, runs_val)

    hook = None
    if on_epoch is not None:
        hook = lambda epoch, tl, vm: on_epoch(epoch, live, tl, vm)
    report = run_training(task, config.train_settings(), val_fn, hook)
    params = SimfluenceParams(
        config=config, ids=ids, mul=task.params[0], add=task.params[1]
    )
    return params, report


def simfluence_rollout(params: SimfluenceParams, run: Run, test_id: str) -> Trajectory:
    """Autoregressive forecast with per-id factors; first step seeded from
    ground truth. Unregistered batch members raise UnknownExampleError."""
    metric = params.config.metric
    truth = run.trajectory(test_id, metric)
    T = run.num_steps
    out = np.empty(T)
    out[0] = truth.values[0]
    for t in range(2, T + 1):
        alpha, beta = params.batch_coefficients(run.curriculum.batch(t))
        y = alpha * out[t - 2] + beta
        if not np.isfinite(y):
            raise NumericalError(
                f"rollout diverged at step {t} (run {run.run_id}, test {test_id})"
            )
        out[t - 1] = y
    return Trajectory(test_id=test_id, metric=metric, values=out)


def simfluence_mean_rollout_mse(params: SimfluenceParams, runs: RunSet) -> float:
    from .evalmetrics import all_steps_mse

    metric = params.config.metric
    scores = []
    for run in runs:
        for tid in run.test_ids(metric):
            pred = simfluence_rollout(params, run, tid)
            scores.append(all_steps_mse(pred, run.trajectory(tid, metric), 1))
    if not scores:
        raise ValidationError(f"no trajectories of metric {metric!r}")
    return float(np.mean(scores))


def save_simfluence(params: SimfluenceParams, path: str | Path) -> Path:
    obj = {
        "format_version": 1,
        "kind": "per-id",
        "metric": params.config.metric,
        "config": params.config.to_dict(),
        "ids": list(params.ids),
        "mul": [float(v) for v in params.mul],
        "add": [float(v) for v in params.add],
    }
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n")
    return p


def load_simfluence(path: str | Path) -> SimfluenceParams:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"corrupt model file {p}: {e}") from None
    if not isinstance(obj, dict) or obj.get("kind") != "per-id":
        raise ValidationError(f"model file {p} is not a per-id simulator")
    if obj.get("format_version") != 1:
        raise ValidationError(f"version mismatch in {p}: {obj.get('format_version')!r}")
    config = SimulatorConfig.from_dict(obj["config"])
    return SimfluenceParams(
        config=config,
        ids=tuple(obj["ids"]),
        mul=np.asarray(obj["mul"], dtype=np.float64),
        add=np.asarray(obj["add"], dtype=np.float64),
    )


@dataclass(frozen=True)
class Checkpoint:
    """Per-checkpoint learning rate and gradient dot products.

    ``step`` identifies the parameter state right after that training step
    (0 = initial state); ``lr`` is the learning rate of the following
    update. ``dots`` maps (first_id, second_id) pairs to the dot product of
    their loss gradients at this state; self pairs (a, a) are allowed.
    """

    step: int
    lr: float
    dots: Mapping[tuple[str, str], float]

    def __post_init__(self) -> None:
        if self.step < 0:
            raise ValidationError(f"checkpoint step must be >= 0, got {self.step}")
        if not self.lr > 0:
            raise ValidationError(f"checkpoint learning rate must be > 0, got {self.lr}")
        object.__setattr__(self, "dots", dict(self.dots))

    def dot(self, first: str, second: str) -> float:
        try:
            return self.dots[(first, second)]
        except KeyError:
            raise ValidationError(
                f"pair ({first!r}, {second!r}) missing from checkpoint step {self.step}"
            ) from None


class GradientDump:
    """Ordered gradient-dot-product checkpoints from one training run."""

    def __init__(self, checkpoints: Iterable[Checkpoint]):
        self.checkpoints = tuple(checkpoints)
        if not self.checkpoints:
            raise ValidationError("empty dump: at least one checkpoint required")
        steps = [c.step for c in self.checkpoints]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValidationError(f"checkpoint steps must be strictly increasing: {steps}")

    def __len__(self) -> int:
        return len(self.checkpoints)

    def final_only(self) -> "GradientDump":
        """Dump reduced to the last checkpoint (final trained state)."""
        return GradientDump([self.checkpoints[-1]])

    def at_or_before(self, step: int) -> Checkpoint:
        """Nearest checkpoint at or before ``step``; earliest if none."""
        chosen = self.checkpoints[0]
        for c in self.checkpoints:
            if c.step <= step:
                chosen = c
            else:
                break
        return chosen


def tracin_influence(dump: GradientDump, train_id: str, test_id: str) -> float:
    """Checkpoint-ensembled influence: sum over checkpoints of lr times the
    gradient dot product of the pair."""
    return float(
        sum(c.lr * c.dot(train_id, test_id) for c in dump.checkpoints)
    )


def graddot_influence(dump: GradientDump, train_id: str, test_id: str) -> float:
    """Gradient dot product at the final trained model only."""
    if len(dump) != 1:
        raise ValidationError(
            f"final-model variant requires exactly one checkpoint, dump has {len(dump)}"
        )
    return float(dump.checkpoints[0].dot(train_id, test_id))


def tracin_simulate(
    dump: GradientDump, run: Run, test_id: str, y1: float, metric: str = "loss"
) -> Trajectory:
    """First-order loss-trajectory forecast.

    Step 1 is seeded with ``y1``; each later step t subtracts lr times the
    batch gradient-dot sum taken from the nearest checkpoint at or before
    the pre-step state t-1 (the earliest checkpoint if none precedes it).
    """
    T = run.num_steps
    out = np.empty(T)
    out[0] = float(y1)
    for t in range(2, T + 1):
        ck = dump.at_or_before(t - 1)
        delta = 0.0
        for ex in run.curriculum.batch(t):
            delta += ck.dot(ex, test_id)
        out[t - 1] = out[t - 2] - ck.lr * delta
    if not np.all(np.isfinite(out)):
        raise NumericalError(
            f"simulated trajectory diverged (run {run.run_id}, test {test_id})"
        )
    return Trajectory(test_id=test_id, metric=metric, values=out)


def save_dump(dump: GradientDump, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as fh:
        fh.write(_json_line({"format": DUMP_FORMAT}))
        for c in dump.checkpoints:
            fh.write(
                _json_line(
                    {
                        "step": c.step,
                        "lr": c.lr,
                        "dots": [
                            {"train": a, "test": b, "v": float(v)}
                            for (a, b), v in c.dots.items()
                        ],
                    }
                )
            )
    return p


def load_dump(path: str | Path) -> GradientDump:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    checkpoints: list[Checkpoint] = []
    with open(p, encoding="utf-8") as fh:
        lines = [(i + 1, line) for i, line in enumerate(fh) if line.strip()]
    if not lines:
        raise ParseError(f"{p}: empty dump file")
    lineno, first_line = lines[0]
    try:
        first = json.loads(first_line)
    except json.JSONDecodeError as e:
        raise ParseError(f"{p}:{lineno}: malformed JSON: {e}") from None
    if isinstance(first, dict) and "format" in first:
        # optional header line; bare checkpoint-only files are accepted too
        if first.get("format") != DUMP_FORMAT:
            raise ParseError(
                f"{p}:{lineno}: unsupported dump format {first.get('format')!r}"
            )
        lines = lines[1:]
    for lineno, line in lines:
        where = f"{p}:{lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"{where}: malformed JSON: {e}") from None
        if not isinstance(obj, dict):
            raise ParseError(f"{where}: checkpoint record must be a JSON object")
        try:
            step = obj["step"]
            lr = obj["lr"]
            dot_list = obj["dots"]
        except KeyError as e:
            raise ParseError(f"{where}: missing field {e}") from None
        if isinstance(step, bool) or not isinstance(step, int):
            raise ParseError(f"{where}: 'step' must be an integer")
        if isinstance(lr, bool) or not isinstance(lr, (int, float)):
            raise ParseError(f"{where}: 'lr' must be a number")
        dots: dict[tuple[str, str], float] = {}
        for i, d in enumerate(dot_list):
            if (
                not isinstance(d, dict)
                or not isinstance(d.get("train"), str)
                or not isinstance(d.get("test"), str)
                or isinstance(d.get("v"), bool)
                or not isinstance(d.get("v"), (int, float))
            ):
                raise ParseError(
                    f"{where}: dots[{i}] must be {{train: str, test: str, v: number}}"
                )
            dots[(d["train"], d["test"])] = float(d["v"])
        checkpoints.append(Checkpoint(step=step, lr=float(lr), dots=dots))
    return GradientDump(checkpoints)
