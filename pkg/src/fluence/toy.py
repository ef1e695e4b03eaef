"""A genuinely trained toy classifier producing real loss trajectories,
exact per-example gradients, and checkpoint dumps.

The model is multinomial logistic regression (convex), so the first-order
loss-change approximation carries a provable O(lr^2) per-step error and
gradient dot products have a closed form: the gradient of example (x, y)
is (softmax(Wx) - onehot(y)) x^T, hence the dot of two examples factors
into (residual dot) * (feature dot).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .baselines import Checkpoint, GradientDump
from .dynamics import Curriculum, EmbeddingTable, Run, RunSet, Trajectory
from .errors import NumericalError, ValidationError


@dataclass(frozen=True)
class ToyDataset:
    """Gaussian-blob classification data with opaque string ids."""

    train_ids: tuple[str, ...]
    x_train: np.ndarray  # (N, features)
    y_train: np.ndarray  # (N,) int labels
    test_ids: tuple[str, ...]
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        if self.x_train.shape[0] != len(self.train_ids) or self.y_train.shape[0] != len(self.train_ids):
            raise ValidationError("train arrays and ids disagree in length")
        if self.x_test.shape[0] != len(self.test_ids) or self.y_test.shape[0] != len(self.test_ids):
            raise ValidationError("test arrays and ids disagree in length")
        if self.n_classes < 2:
            raise ValidationError("need at least 2 classes")

    @property
    def n_features(self) -> int:
        return int(self.x_train.shape[1])

    def train_index(self, ex_id: str) -> int:
        return self.train_ids.index(ex_id)


def make_toy_dataset(
    n_train: int = 200,
    n_test: int = 10,
    n_classes: int = 2,
    n_features: int = 10,
    seed: int = 0,
    separation: float = 3.0,
) -> ToyDataset:
    """Well-separated Gaussian blobs, one per class, on the unit sphere.

    Features are unit-normalized so they coincide with the exported
    embeddings and so gradient magnitudes reflect label fit rather than
    feature norm.
    """
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_classes, n_features))
    centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)

    def sample(n: int) -> tuple[np.ndarray, np.ndarray]:
        labels = rng.integers(0, n_classes, size=n)
        x = centers[labels] + rng.standard_normal((n, n_features))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        return x, labels

    x_train, y_train = sample(n_train)
    x_test, y_test = sample(n_test)
    return ToyDataset(
        train_ids=tuple(f"train_{i:04d}" for i in range(n_train)),
        x_train=x_train,
        y_train=y_train,
        test_ids=tuple(f"test_{i:04d}" for i in range(n_test)),
        x_test=x_test,
        y_test=y_test,
        n_classes=n_classes,
    )


def corrupt_labels(
    dataset: ToyDataset, fraction: float, seed: int
) -> tuple[ToyDataset, set[str]]:
    """Flip exactly floor(fraction * N) train labels to a different class.

    Returns the corrupted dataset and the ground-truth flipped id set.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValidationError(f"fraction must be in [0, 1], got {fraction}")
    n = len(dataset.train_ids)
    k = int(fraction * n)
    if k == 0:
        return dataset, set()
    rng = np.random.default_rng(seed)
    picked = rng.choice(n, size=k, replace=False)
    labels = dataset.y_train.copy()
    offsets = rng.integers(1, dataset.n_classes, size=k)
    labels[picked] = (labels[picked] + offsets) % dataset.n_classes
    flipped = {dataset.train_ids[i] for i in picked}
    return replace(dataset, y_train=labels), flipped


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def xent_losses(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cross-entropy loss per example under weight matrix (classes, features)."""
    logits = x @ weights.T
    logits = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(logits).sum(axis=1))
    return logsumexp - logits[np.arange(x.shape[0]), y]


def accuracy(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((x @ weights.T).argmax(axis=1) == y))


def grad_sum(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sum over examples of per-example cross-entropy gradients."""
    resid = softmax(x @ weights.T)
    resid[np.arange(x.shape[0]), y] -= 1.0
    return resid.T @ x


def _residuals(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    resid = softmax(x @ weights.T)
    resid[np.arange(x.shape[0]), y] -= 1.0
    return resid


@dataclass(frozen=True)
class ToyRunConfig:
    """Geometry of recorded toy training runs.

    ``checkpoint_interval`` selects parameter states 0, k, 2k, ... (state s
    is the model after step s; state 0 is the initialization) plus the
    final state; dumps store exact pairwise gradient dots of every subset
    train example against every test example, and each train example
    against itself.
    """

    n_runs: int = 1
    num_steps: int = 50
    batch_size: int = 8
    per_run: int | None = None  # None = full train pool each run
    learning_rate: float = 1e-3
    checkpoint_interval: int = 1
    seed: int = 0
    divergence_cap: float = 1e6
    fixed_curriculum: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self) -> None:
        if self.num_steps < 1 or self.batch_size < 1 or self.n_runs < 1:
            raise ValidationError("num_steps, batch_size, n_runs must be >= 1")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        if self.checkpoint_interval < 1:
            raise ValidationError("checkpoint_interval must be >= 1")


def _dump_checkpoint(
    weights: np.ndarray,
    step: int,
    lr: float,
    dataset: ToyDataset,
    subset_idx: np.ndarray,
) -> Checkpoint:
    r_train = _residuals(weights, dataset.x_train[subset_idx], dataset.y_train[subset_idx])
    r_test = _residuals(weights, dataset.x_test, dataset.y_test)
    # <grad_a, grad_b> = (resid_a . resid_b) * (x_a . x_b) for rank-1 grads
    feat_tt = dataset.x_train[subset_idx] @ dataset.x_test.T
    resid_tt = r_train @ r_test.T
    dots: dict[tuple[str, str], float] = {}
    for a, ia in enumerate(subset_idx):
        a_id = dataset.train_ids[ia]
        for b, b_id in enumerate(dataset.test_ids):
            dots[(a_id, b_id)] = float(resid_tt[a, b] * feat_tt[a, b])
        self_dot = float(
            np.dot(r_train[a], r_train[a])
            * np.dot(dataset.x_train[ia], dataset.x_train[ia])
        )
        dots[(a_id, a_id)] = self_dot
    # lr stored with state s is the rate of the following update
    return Checkpoint(step=step, lr=lr, dots=dots)


def train_toy_and_record(
    dataset: ToyDataset, cfg: ToyRunConfig
) -> tuple[RunSet, EmbeddingTable, dict[str, GradientDump]]:
    """Run SGD (sum-reduction batches) and record post-update test losses,
    exact gradient-dot dumps at checkpoint states, and feature embeddings.

    Returns (runs, embeddings, dumps keyed by run_id).
    """
    n_train = len(dataset.train_ids)
    per_run = cfg.per_run if cfg.per_run is not None else n_train
    if not 1 <= per_run <= n_train:
        raise ValidationError(f"per_run must be in 1..{n_train}")
    entries = list(zip(dataset.train_ids, dataset.x_train)) + list(
        zip(dataset.test_ids, dataset.x_test)
    )
    embeddings = EmbeddingTable(dataset.n_features, entries)
    id_index = {ex: i for i, ex in enumerate(dataset.train_ids)}

    runs = []
    dumps: dict[str, GradientDump] = {}
    for k in range(cfg.n_runs):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, k)))
        run_id = f"toyrun_{k:03d}"
        if cfg.fixed_curriculum is not None:
            curriculum = Curriculum(cfg.fixed_curriculum)
            if curriculum.num_steps != cfg.num_steps:
                raise ValidationError("fixed curriculum length must equal num_steps")
            subset_idx = np.asarray(
                sorted({id_index[ex] for b in cfg.fixed_curriculum for ex in b}),
                dtype=np.int64,
            )
        else:
            subset_idx = np.sort(rng.choice(n_train, size=per_run, replace=False))
            subset_ids = [dataset.train_ids[i] for i in subset_idx]
            needed = cfg.num_steps * cfg.batch_size
            order: list[str] = []
            while len(order) < needed:
                order.extend(subset_ids[i] for i in rng.permutation(len(subset_ids)))
            curriculum = Curriculum(
                tuple(
                    tuple(order[t * cfg.batch_size : (t + 1) * cfg.batch_size])
                    for t in range(cfg.num_steps)
                )
            )

        weights = np.zeros((dataset.n_classes, dataset.n_features))
        lr = cfg.learning_rate
        checkpoints = []
        traj_values = np.empty((len(dataset.test_ids), cfg.num_steps))
        for t in range(1, cfg.num_steps + 1):
            if (t - 1) % cfg.checkpoint_interval == 0:
                checkpoints.append(
                    _dump_checkpoint(weights, t - 1, max(lr, 1e-300), dataset, subset_idx)
                )
            batch = curriculum.batch(t)
            bidx = np.asarray([id_index[ex] for ex in batch], dtype=np.int64)
            weights = weights - lr * grad_sum(
                weights, dataset.x_train[bidx], dataset.y_train[bidx]
            )
            losses = xent_losses(weights, dataset.x_test, dataset.y_test)
            if not np.all(np.isfinite(losses)) or losses.max() > cfg.divergence_cap:
                raise NumericalError(
                    f"toy training diverged: run {run_id}, step {t}, "
                    f"max test loss {losses.max():.3g}"
                )
            traj_values[:, t - 1] = losses
        if checkpoints[-1].step != cfg.num_steps:
            checkpoints.append(
                _dump_checkpoint(weights, cfg.num_steps, max(lr, 1e-300), dataset, subset_idx)
            )
        trajectories = {
            (tid, "loss"): Trajectory(test_id=tid, metric="loss", values=traj_values[j])
            for j, tid in enumerate(dataset.test_ids)
        }
        runs.append(
            Run(
                run_id=run_id,
                curriculum=curriculum,
                trajectories=trajectories,
                tags={"source": "toy", "lr": cfg.learning_rate},
            )
        )
        dumps[run_id] = GradientDump(checkpoints)
    return RunSet(runs), embeddings, dumps
