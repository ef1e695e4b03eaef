"""Featurized trajectory simulator.

Each training example contributes a multiplicative factor per lag and one
additive factor toward a test example's next metric value. Factors come
from frozen example embeddings passed through learned linear projections:
for lag j, the factor is the dot product of the projected train and test
embeddings, and batch-level coefficients are the sums of per-example
factors over the consumed batch. The resulting recurrence

    y_t = sum_j alpha_j(batch_t) * y_{t-j} + beta(batch_t)

is fitted teacher-forced (ground-truth history) with an L2 penalty and
evaluated autoregressively from the first ``order`` ground-truth values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .dynamics import EmbeddingTable, Run, RunSet, Trajectory
from .errors import (
    MissingTrajectoryError,
    NumericalError,
    ParseError,
    ValidationError,
)
from .training import FitReport, TrainSettings, run_training

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SimulatorConfig:
    """Hyperparameters of the featurized simulator and its fit."""

    embed_dim: int
    order: int = 1
    proj_dim: int = 64
    l2_lambda: float = 1e-5
    learning_rate: float = 1e-4
    warmup_steps: int = 200
    max_epochs: int = 300
    batch_size: int = 128
    early_stop_patience: int = 10
    seed: int = 42
    metric: str = "loss"
    share_projections: bool = False

    def __post_init__(self) -> None:
        if self.order < 1:
            raise ValidationError(f"order must be >= 1, got {self.order}")
        if self.embed_dim < 0:
            raise ValidationError(f"embed_dim must be >= 0, got {self.embed_dim}")
        if self.proj_dim < 1:
            raise ValidationError(f"proj_dim must be >= 1, got {self.proj_dim}")
        if self.l2_lambda < 0:
            raise ValidationError("l2_lambda must be >= 0")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if self.warmup_steps < 0 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValidationError("invalid optimizer settings")
        if self.early_stop_patience < 0:
            raise ValidationError("early_stop_patience must be >= 0")
        if not self.metric:
            raise ValidationError("metric must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "embed_dim": self.embed_dim,
            "order": self.order,
            "proj_dim": self.proj_dim,
            "l2_lambda": self.l2_lambda,
            "learning_rate": self.learning_rate,
            "warmup_steps": self.warmup_steps,
            "max_epochs": self.max_epochs,
            "batch_size": self.batch_size,
            "early_stop_patience": self.early_stop_patience,
            "seed": self.seed,
            "metric": self.metric,
            "share_projections": self.share_projections,
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "SimulatorConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            learning_rate=self.learning_rate,
            warmup_steps=self.warmup_steps,
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            l2_lambda=self.l2_lambda,
            early_stop_patience=self.early_stop_patience,
            seed=self.seed,
        )


@dataclass
class SimulatorParams:
    """Learned projections: per-lag multiplicative pairs plus one additive
    pair, each mapping embed_dim -> proj_dim.

    With ``share_projections`` the same multiplicative pair is used for
    every lag (the stored tuples alias one array).
    """

    config: SimulatorConfig
    train_mul: tuple[np.ndarray, ...]
    test_mul: tuple[np.ndarray, ...]
    train_add: np.ndarray
    test_add: np.ndarray

    def __post_init__(self) -> None:
        d, p, n = self.config.embed_dim, self.config.proj_dim, self.config.order
        if len(self.train_mul) != n or len(self.test_mul) != n:
            raise ValidationError(
                f"expected {n} multiplicative projections per side, got "
                f"{len(self.train_mul)}/{len(self.test_mul)}"
            )
        for name, mat in self._named_matrices():
            if mat.shape != (d, p):
                raise ValidationError(
                    f"shape mismatch: {name} is {mat.shape}, expected ({d}, {p})"
                )
            if not np.all(np.isfinite(mat)):
                raise ValidationError(f"{name} has non-finite entries")

    def _named_matrices(self):
        for j, m in enumerate(self.train_mul):
            yield f"train_mul[{j}]", m
        for j, m in enumerate(self.test_mul):
            yield f"test_mul[{j}]", m
        yield "train_add", self.train_add
        yield "test_add", self.test_add

    def unique_arrays(self) -> list[np.ndarray]:
        """Distinct parameter arrays (shared projections count once)."""
        if self.config.share_projections:
            return [self.train_mul[0], self.test_mul[0], self.train_add, self.test_add]
        return [*self.train_mul, *self.test_mul, self.train_add, self.test_add]

    def l2_norm_sq(self) -> float:
        return float(sum(np.sum(a * a) for a in self.unique_arrays()))

    def copy(self) -> "SimulatorParams":
        return params_from_arrays(self.config, [a.copy() for a in self.unique_arrays()])


def params_from_arrays(config: SimulatorConfig, arrays: Sequence[np.ndarray]) -> SimulatorParams:
    """Assemble params from the distinct-array layout used by the trainer."""
    n = config.order
    if config.share_projections:
        w, u, wa, ua = arrays
        return SimulatorParams(config, (w,) * n, (u,) * n, wa, ua)
    ws = tuple(arrays[:n])
    us = tuple(arrays[n : 2 * n])
    wa, ua = arrays[2 * n], arrays[2 * n + 1]
    return SimulatorParams(config, ws, us, wa, ua)


def init_params(config: SimulatorConfig) -> SimulatorParams:
    """Seed-deterministic init: entries uniform in [-1/sqrt(d), 1/sqrt(d)]."""
    if config.embed_dim < 1:
        raise ValidationError("embed_dim must be >= 1 to initialize parameters")
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    d, p = config.embed_dim, config.proj_dim
    bound = 1.0 / np.sqrt(d)
    n_mul = 1 if config.share_projections else config.order
    draw = lambda: rng.uniform(-bound, bound, size=(d, p))
    ws = [draw() for _ in range(n_mul)]
    us = [draw() for _ in range(n_mul)]
    return params_from_arrays(config, [*ws, *us, draw(), draw()])


def _check_dim(vec: np.ndarray, d: int, name: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.shape != (d,):
        raise ValidationError(
            f"dimension mismatch: {name} has shape {arr.shape}, expected ({d},)"
        )
    return arr


def influence_factors(
    params: SimulatorParams, h_train: np.ndarray, h_test: np.ndarray
) -> tuple[np.ndarray, float]:
    """Per-lag multiplicative factors and the additive factor for one
    (train, test) embedding pair."""
    d = params.config.embed_dim
    h_train = _check_dim(h_train, d, "h_train")
    h_test = _check_dim(h_test, d, "h_test")
    a = np.empty(params.config.order)
    for j, (w, u) in enumerate(zip(params.train_mul, params.test_mul)):
        a[j] = np.dot(h_train @ w, h_test @ u)
    b = float(np.dot(h_train @ params.train_add, h_test @ params.test_add))
    return a, b


def step_factors(
    params: SimulatorParams,
    batch: Sequence[np.ndarray],
    h_test: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Batch coefficients: per-example factors accumulated left to right.

    The accumulation order is fixed by the batch order, so results are
    bit-identical however callers distribute work.
    """
    if len(batch) == 0:
        raise ValidationError("empty batch")
    d = params.config.embed_dim
    h_test = _check_dim(h_test, d, "h_test")
    q_mul = [h_test @ u for u in params.test_mul]
    q_add = h_test @ params.test_add
    alpha = np.zeros(params.config.order)
    beta = 0.0
    for h in batch:
        h = _check_dim(h, d, "batch member")
        for j, w in enumerate(params.train_mul):
            alpha[j] += np.dot(h @ w, q_mul[j])
        beta += float(np.dot(h @ params.train_add, q_add))
    return alpha, beta


def predict_step(alpha: np.ndarray, beta: float, history: Sequence[float]) -> float:
    """One recurrence step; ``history`` is ordered most-recent-first."""
    alpha = np.asarray(alpha, dtype=np.float64)
    hist = np.asarray(history, dtype=np.float64)
    if alpha.shape != hist.shape:
        raise ValidationError(
            f"history length mismatch: {hist.shape} history for {alpha.shape} coefficients"
        )
    return float(np.dot(alpha, hist) + beta)


def rollout(
    params: SimulatorParams,
    run: Run,
    embeddings: EmbeddingTable,
    test_id: str,
) -> Trajectory:
    """Autoregressive forecast of a test example's trajectory along a run.

    Steps 1..order are copied from the run's ground truth; later steps feed
    the simulator its own predictions.
    """
    cfg = params.config
    n = cfg.order
    truth = run.trajectory(test_id, cfg.metric)
    T = run.num_steps
    if T < n:
        raise ValidationError(
            f"missing seed values: run {run.run_id} has {T} steps, order is {n}"
        )
    h_test = embeddings.get(test_id)
    out = np.empty(T)
    out[:n] = truth.values[:n]
    for t in range(n + 1, T + 1):
        batch = [embeddings.get(ex) for ex in run.curriculum.batch(t)]
        alpha, beta = step_factors(params, batch, h_test)
        history = out[t - 1 - n : t - 1][::-1]
        y = predict_step(alpha, beta, history)
        if not np.isfinite(y):
            raise NumericalError(
                f"rollout diverged at step {t} (run {run.run_id}, test {test_id})"
            )
        out[t - 1] = y
    return Trajectory(test_id=test_id, metric=cfg.metric, values=out)


def _batch_embedding_sums(run: Run, embeddings: EmbeddingTable) -> np.ndarray:
    """Sum of member embeddings per step, shape (T, d)."""
    out = np.zeros((run.num_steps, embeddings.dim))
    for t, batch in enumerate(run.curriculum.batches):
        for ex in batch:
            out[t] += embeddings.get(ex)
    return out


@dataclass
class _Targets:
    """Flattened teacher-forced training targets."""

    batch_sum: np.ndarray  # (m, d) summed batch embeddings at the step
    h_test: np.ndarray  # (m, d)
    y_prev: np.ndarray  # (m, n) most-recent-first history
    y: np.ndarray  # (m,)


def build_targets(
    runs: RunSet, embeddings: EmbeddingTable, config: SimulatorConfig
) -> _Targets:
    """Collect every (run, test example, step > order) target."""
    n = config.order
    sums_l, htest_l, prev_l, y_l = [], [], [], []
    for run in runs:
        T = run.num_steps
        if T <= n:
            raise ValidationError(
                f"run {run.run_id} has {T} steps; need more than order {n}"
            )
        test_ids = run.test_ids(config.metric)
        if not test_ids:
            raise MissingTrajectoryError(
                f"run {run.run_id} has no trajectories for metric {config.metric!r}"
            )
        bsum = _batch_embedding_sums(run, embeddings)
        for tid in test_ids:
            vals = run.trajectory(tid, config.metric).values
            h = embeddings.get(tid)
            for t in range(n + 1, T + 1):
                sums_l.append(bsum[t - 1])
                htest_l.append(h)
                prev_l.append(vals[t - 1 - n : t - 1][::-1])
                y_l.append(vals[t - 1])
    return _Targets(
        batch_sum=np.asarray(sums_l),
        h_test=np.asarray(htest_l),
        y_prev=np.asarray(prev_l),
        y=np.asarray(y_l),
    )


class _FeaturizedTask:
    """Regression task over the flattened targets.

    Parameter layout matches SimulatorParams.unique_arrays(). Gradients use
    the identity sum_i <W^T h_i, U^T h'> = <W^T s, U^T h'> with s the batch
    embedding sum, which is exact in real arithmetic.
    """

    def __init__(self, targets: _Targets, config: SimulatorConfig, params: SimulatorParams):
        self.t = targets
        self.config = config
        self.params = params.unique_arrays()
        self._share = config.share_projections
        self._n = config.order

    @property
    def n_targets(self) -> int:
        return int(self.t.y.size)

    def _mul_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        if self._share:
            return [(self.params[0], self.params[1])] * self._n
        n = self._n
        return [(self.params[j], self.params[n + j]) for j in range(n)]

    def _add_pair(self) -> tuple[np.ndarray, np.ndarray]:
        if self._share:
            return self.params[2], self.params[3]
        return self.params[2 * self._n], self.params[2 * self._n + 1]

    def _predict(self, idx: np.ndarray) -> tuple[np.ndarray, list, tuple]:
        s = self.t.batch_sum[idx]
        h = self.t.h_test[idx]
        yp = self.t.y_prev[idx]
        mul_proj = []
        pred = np.zeros(idx.size)
        for j, (w, u) in enumerate(self._mul_pairs()):
            p_tr = s @ w
            p_te = h @ u
            mul_proj.append((p_tr, p_te))
            pred += np.einsum("ij,ij->i", p_tr, p_te) * yp[:, j]
        wa, ua = self._add_pair()
        a_tr = s @ wa
        a_te = h @ ua
        pred += np.einsum("ij,ij->i", a_tr, a_te)
        return pred, mul_proj, (a_tr, a_te)

    def predict(self, idx: np.ndarray) -> np.ndarray:
        return self._predict(idx)[0]

    def loss_and_grads(
        self, idx: np.ndarray, scale: float
    ) -> tuple[float, list[np.ndarray]]:
        """Squared-residual loss (x scale) and matching gradients."""
        pred, mul_proj, (a_tr, a_te) = self._predict(idx)
        resid = pred - self.t.y[idx]
        loss = scale * float(np.dot(resid, resid))
        w_coef = 2.0 * scale * resid
        s = self.t.batch_sum[idx]
        h = self.t.h_test[idx]
        yp = self.t.y_prev[idx]
        grads = [np.zeros_like(p) for p in self.params]
        n = self._n
        for j, (p_tr, p_te) in enumerate(mul_proj):
            c = (w_coef * yp[:, j])[:, None]
            gw = s.T @ (c * p_te)
            gu = h.T @ (c * p_tr)
            if self._share:
                grads[0] += gw
                grads[1] += gu
            else:
                grads[j] += gw
                grads[n + j] += gu
        c = w_coef[:, None]
        ia = 2 if self._share else 2 * n
        grads[ia] += s.T @ (c * a_te)
        grads[ia + 1] += h.T @ (c * a_tr)
        return loss, grads

    def minibatch_loss_and_grads(self, idx: np.ndarray) -> tuple[float, list[np.ndarray]]:
        return self.loss_and_grads(idx, 1.0 / idx.size)

    def full_data_loss(self) -> float:
        resid = self.predict(np.arange(self.n_targets)) - self.t.y
        return float(np.dot(resid, resid) / resid.size)


def teacher_forced_loss(
    params: SimulatorParams, runs: RunSet, embeddings: EmbeddingTable
) -> float:
    """Mean squared teacher-forced residual over all targets (no penalty)."""
    targets = build_targets(runs, embeddings, params.config)
    task = _FeaturizedTask(targets, params.config, params)
    return task.full_data_loss()


def objective_and_gradients(
    params: SimulatorParams, runs: RunSet, embeddings: EmbeddingTable
) -> tuple[float, list[np.ndarray]]:
    """Sum-of-squares objective with L2 penalty, and its gradients.

    Gradient order matches ``params.unique_arrays()``.
    """
    targets = build_targets(runs, embeddings, params.config)
    task = _FeaturizedTask(targets, params.config, params)
    loss, grads = task.loss_and_grads(np.arange(task.n_targets), 1.0)
    lam = params.config.l2_lambda
    loss += lam * params.l2_norm_sq()
    for g, p in zip(grads, task.params):
        g += 2.0 * lam * p
    return loss, grads


def mean_rollout_mse(
    params: SimulatorParams,
    runs: RunSet,
    embeddings: EmbeddingTable,
    threads: int = 1,
) -> float:
    """Rollout all-steps MSE averaged over every (run, test) pair."""
    from .evalmetrics import all_steps_mse

    pairs = [
        (run, tid) for run in runs for tid in run.test_ids(params.config.metric)
    ]
    if not pairs:
        raise ValidationError(f"no trajectories of metric {params.config.metric!r}")

    def one(pair) -> float:
        run, tid = pair
        pred = rollout(params, run, embeddings, tid)
        return all_steps_mse(pred, run.trajectory(tid, params.config.metric), params.config.order)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex:
            scores = list(ex.map(one, pairs))
    else:
        scores = [one(p) for p in pairs]
    return float(np.mean(scores))


def fit(
    runs_train: RunSet,
    runs_val: RunSet,
    embeddings: EmbeddingTable,
    config: SimulatorConfig,
    on_epoch: Callable[[int, SimulatorParams, float, float], None] | None = None,
) -> tuple[SimulatorParams, FitReport]:
    """Fit the featurized simulator teacher-forced.

    Early stopping monitors the validation rollout all-steps MSE and the
    best-validation parameters are returned. ``on_epoch`` receives
    ``(epoch, params_view, train_loss, val_mse)`` after every epoch; the
    params view aliases live arrays, so copy before storing.
    """
    if config.embed_dim != embeddings.dim:
        raise ValidationError(
            f"config embed_dim {config.embed_dim} != embedding table dim {embeddings.dim}"
        )
    if len(runs_train) == 0:
        raise ValidationError("fit: empty training run set")
    if len(runs_val) == 0:
        raise ValidationError("fit: empty validation run set")
    targets = build_targets(runs_train, embeddings, config)
    build_targets(runs_val, embeddings, config)  # fail fast on bad val runs
    params = init_params(config)
    task = _FeaturizedTask(targets, config, params)
    live = params_from_arrays(config, task.params)

    def val_fn() -> float:
        return mean_rollout_mse(live, runs_val, embeddings)

    hook = None
    if on_epoch is not None:
        hook = lambda epoch, tl, vm: on_epoch(epoch, live, tl, vm)
    report = run_training(task, config.train_settings(), val_fn, hook)
    return params_from_arrays(config, task.params), report


def save_model(params: SimulatorParams, path: str | Path) -> Path:
    """Write a simulator to a versioned JSON model file."""
    cfg = params.config
    n_stored = 1 if cfg.share_projections else cfg.order
    obj = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "featurized",
        "d": cfg.embed_dim,
        "p": cfg.proj_dim,
        "n": cfg.order,
        "metric": cfg.metric,
        "share_projections": cfg.share_projections,
        "config": cfg.to_dict(),
        "train_mul": [params.train_mul[j].tolist() for j in range(n_stored)],
        "test_mul": [params.test_mul[j].tolist() for j in range(n_stored)],
        "train_add": params.train_add.tolist(),
        "test_add": params.test_add.tolist(),
    }
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n")
    return p


def load_model(path: str | Path) -> SimulatorParams:
    """Load a simulator saved by save_model; round-trips exactly."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"corrupt model file {p}: {e}") from None
    if not isinstance(obj, dict):
        raise ParseError(f"corrupt model file {p}: expected a JSON object")
    version = obj.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValidationError(
            f"version mismatch: model file {p} has format_version {version!r}, "
            f"expected {MODEL_FORMAT_VERSION}"
        )
    if obj.get("kind") != "featurized":
        raise ValidationError(f"model file {p} is not a featurized simulator")
    try:
        config = SimulatorConfig.from_dict(obj["config"])
    except KeyError:
        raise ParseError(f"corrupt model file {p}: missing config") from None
    for key, expect in (("d", config.embed_dim), ("p", config.proj_dim), ("n", config.order), ("metric", config.metric), ("share_projections", config.share_projections)):
        if obj.get(key) != expect:
            raise ValidationError(
                f"shape mismatch: model file {p} header {key}={obj.get(key)!r} "
                f"disagrees with config value {expect!r}"
            )
    d, pr = config.embed_dim, config.proj_dim
    n_stored = 1 if config.share_projections else config.order

    def mat(x: Any, name: str) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape != (d, pr):
            raise ValidationError(
                f"shape mismatch: {name} in {p} has shape {arr.shape}, expected ({d}, {pr})"
            )
        return arr

    try:
        ws = [mat(x, f"train_mul[{j}]") for j, x in enumerate(obj["train_mul"])]
        us = [mat(x, f"test_mul[{j}]") for j, x in enumerate(obj["test_mul"])]
        wa = mat(obj["train_add"], "train_add")
        ua = mat(obj["test_add"], "test_add")
    except KeyError as e:
        raise ParseError(f"corrupt model file {p}: missing {e}") from None
    if len(ws) != n_stored or len(us) != n_stored:
        raise ValidationError(
            f"shape mismatch: {p} stores {len(ws)}/{len(us)} multiplicative "
            f"projections, expected {n_stored}"
        )
    return params_from_arrays(config, [*ws, *us, wa, ua])
