"""Deterministic Adam trainer shared by the trajectory simulators.

The optimizer is Adam with beta=(0.9, 0.999), eps=1e-8, a linear warmup
followed by linear decay to zero, and zero decoupled weight decay: the L2
penalty enters the gradient explicitly so it is applied exactly once.
Targets are shuffled per epoch from a single seeded generator, so identical
config, seed, and data give bit-identical losses and parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import NumericalError, ValidationError


class RegressionTask(Protocol):
    """A squared-error regression task over an indexed target set."""

    params: list[np.ndarray]

    @property
    def n_targets(self) -> int: ...

    def minibatch_loss_and_grads(
        self, idx: np.ndarray
    ) -> tuple[float, list[np.ndarray]]:
        """Mean squared residual over ``idx`` and its gradient per param."""
        ...

    def full_data_loss(self) -> float:
        """Mean squared residual over every target (no penalty)."""
        ...


@dataclass
class FitReport:
    """Per-epoch record of a simulator fit."""

    epochs_run: int
    train_loss_per_epoch: list[float]
    val_mse_per_epoch: list[float]
    best_epoch: int
    stopped_early: bool


@dataclass
class TrainSettings:
    """Optimizer settings shared by every simulator fit."""

    learning_rate: float
    warmup_steps: int
    max_epochs: int
    batch_size: int
    l2_lambda: float
    early_stop_patience: int
    seed: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def lr_at(step: int, total_steps: int, warmup: int, base_lr: float) -> float:
    """Linear warmup to ``base_lr`` then linear decay to zero."""
    if warmup > 0 and step <= warmup:
        return base_lr * step / warmup
    if total_steps <= warmup:
        return base_lr
    return base_lr * max(0.0, (total_steps - step) / (total_steps - warmup))


class _Adam:
    def __init__(self, params: Sequence[np.ndarray], settings: TrainSettings):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self.s = settings

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2, eps = self.s.beta1, self.s.beta2, self.s.eps
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def run_training(
    task: RegressionTask,
    settings: TrainSettings,
    val_fn: Callable[[], float],
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> FitReport:
    """Fit ``task`` and restore the best-validation parameters.

    ``val_fn`` is evaluated after each epoch with the task's current
    parameters and should return the validation all-steps rollout MSE.
    ``on_epoch(epoch, train_loss, val_mse)`` is called once per epoch after
    the epoch's updates, with end-of-epoch parameters in place.
    """
    n = task.n_targets
    if n < 1:
        raise ValidationError("no training targets")
    bs = min(settings.batch_size, n)
    steps_per_epoch = (n + bs - 1) // bs
    total_steps = steps_per_epoch * settings.max_epochs
    rng = np.random.default_rng(settings.seed)
    adam = _Adam(task.params, settings)
    lam = settings.l2_lambda

    train_losses: list[float] = []
    val_losses: list[float] = []
    best_val = np.inf
    best_epoch = 0
    best_params: list[np.ndarray] | None = None
    bad_epochs = 0
    stopped_early = False
    step = 0

    for epoch in range(1, settings.max_epochs + 1):
        perm = rng.permutation(n)
        for lo in range(0, n, bs):
            idx = perm[lo : lo + bs]
            step += 1
            loss, grads = task.minibatch_loss_and_grads(idx)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"NaN loss at epoch {epoch}, optimizer step {step}"
                )
            if lam > 0.0:
                for g, p in zip(grads, task.params):
                    g += 2.0 * lam * p
            adam.step(task.params, grads, lr_at(step, total_steps, settings.warmup_steps, settings.learning_rate))

        train_loss = task.full_data_loss()
        if not np.isfinite(train_loss):
            raise NumericalError(f"NaN training loss after epoch {epoch}")
        val_mse = float(val_fn())
        if not np.isfinite(val_mse):
            raise NumericalError(f"NaN validation MSE after epoch {epoch}")
        train_losses.append(train_loss)
        val_losses.append(val_mse)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_mse)

        if val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch
            best_params = [p.copy() for p in task.params]
            bad_epochs = 0
        else:
            bad_epochs += 1
            if settings.early_stop_patience > 0 and bad_epochs >= settings.early_stop_patience:
                stopped_early = True
                break

    if best_params is not None:
        for p, b in zip(task.params, best_params):
            p[...] = b

    return FitReport(
        epochs_run=len(train_losses),
        train_loss_per_epoch=train_losses,
        val_mse_per_epoch=val_losses,
        best_epoch=best_epoch,
        stopped_early=stopped_early,
    )
