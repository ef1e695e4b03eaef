"""Equivalence between the featurized simulator and the per-id baseline.

With first order, one-hot embeddings over the corpus, and projection width
one, the featurized model class contains the per-id model: a per-id
simulator maps onto featurized parameters whose train-side projection holds
the per-id scalars and whose test-side projection is all ones. The check
fits the per-id simulator, maps its parameters into featurized form after
every epoch, and verifies that the featurized code path reproduces the
per-id training losses and rollouts through entirely separate arithmetic
(bilinear projections versus table lookups).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .baselines import SimfluenceParams, simfluence_fit, simfluence_rollout
from .dynamics import EmbeddingTable, RunSet
from .errors import ValidationError
from .simulator import (
    SimulatorConfig,
    SimulatorParams,
    rollout,
    teacher_forced_loss,
)


def one_hot_embeddings(ids: Sequence[str]) -> EmbeddingTable:
    """One basis vector per id; dimension equals the corpus size."""
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ValidationError("one-hot corpus ids must be unique")
    dim = len(ids)
    eye = np.eye(dim)
    return EmbeddingTable(dim, [(ex, eye[i]) for i, ex in enumerate(ids)])


def embed_per_id_params(
    params: SimfluenceParams, corpus_ids: Sequence[str]
) -> SimulatorParams:
    """Map per-id scalars into featurized parameters over a one-hot corpus.

    Train-side projections carry the per-id scalars (zero for ids outside
    the registry, e.g. test ids); test-side projections are all ones, so
    the bilinear factor of (train i, test i') reproduces the per-id scalar
    of i exactly.
    """
    corpus_ids = list(corpus_ids)
    index = {ex: i for i, ex in enumerate(corpus_ids)}
    missing = [ex for ex in params.ids if ex not in index]
    if missing:
        raise ValidationError(f"corpus is missing registered ids: {missing[:5]}")
    dim = len(corpus_ids)
    w_mul = np.zeros((dim, 1))
    w_add = np.zeros((dim, 1))
    for ex, a, b in zip(params.ids, params.mul, params.add):
        w_mul[index[ex], 0] = a
        w_add[index[ex], 0] = b
    ones = np.ones((dim, 1))
    config = SimulatorConfig(
        embed_dim=dim,
        order=1,
        proj_dim=1,
        l2_lambda=params.config.l2_lambda,
        learning_rate=params.config.learning_rate,
        warmup_steps=params.config.warmup_steps,
        max_epochs=params.config.max_epochs,
        batch_size=params.config.batch_size,
        early_stop_patience=params.config.early_stop_patience,
        seed=params.config.seed,
        metric=params.config.metric,
    )
    return SimulatorParams(
        config=config,
        train_mul=(w_mul,),
        test_mul=(ones,),
        train_add=w_add,
        test_add=ones.copy(),
    )


@dataclass(frozen=True)
class ReductionReport:
    """Outcome of the equivalence check."""

    epochs: int
    max_epoch_loss_diff: float
    max_rollout_diff: float
    loss_tolerance: float
    rollout_tolerance: float

    @property
    def passed(self) -> bool:
        return (
            self.max_epoch_loss_diff <= self.loss_tolerance
            and self.max_rollout_diff <= self.rollout_tolerance
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "epochs": self.epochs,
            "max_epoch_loss_diff": self.max_epoch_loss_diff,
            "max_rollout_diff": self.max_rollout_diff,
            "loss_tolerance": self.loss_tolerance,
            "rollout_tolerance": self.rollout_tolerance,
            "passed": self.passed,
        }


def reduction_check(
    runs_train: RunSet,
    runs_val: RunSet,
    runs_eval: RunSet,
    config: SimulatorConfig,
    tolerance: float = 1e-6,
) -> ReductionReport:
    """Fit the per-id simulator and verify the featurized realization.

    After each epoch the current per-id scalars are mapped into featurized
    parameters and the featurized teacher-forced training loss is recomputed
    on the same targets; after the fit, rollouts on ``runs_eval`` are
    compared pointwise between both implementations.
    """
    registry = runs_train.train_ids() | runs_val.train_ids()
    unregistered = runs_eval.train_ids() - registry
    if unregistered:
        raise ValidationError(
            "eval runs contain ids absent from the fitted registry "
            f"(e.g. {sorted(unregistered)[:3]}); the per-id side cannot roll "
            "them out, so draw eval runs from the fitted pool"
        )
    corpus = sorted(
        registry
        | runs_train.test_ids()
        | runs_val.test_ids()
        | runs_eval.test_ids()
    )
    table = one_hot_embeddings(corpus)
    loss_diffs: list[float] = []

    def on_epoch(epoch: int, live: SimfluenceParams, train_loss: float, val_mse: float) -> None:
        mapped = embed_per_id_params(live, corpus)
        fe_loss = teacher_forced_loss(mapped, runs_train, table)
        loss_diffs.append(abs(fe_loss - train_loss))

    params, report = simfluence_fit(runs_train, runs_val, config, on_epoch=on_epoch)

    mapped = embed_per_id_params(params, corpus)
    max_rollout_diff = 0.0
    for run in runs_eval:
        for tid in run.test_ids(config.metric):
            base = simfluence_rollout(params, run, tid)
            feat = rollout(mapped, run, table, tid)
            diff = float(np.max(np.abs(base.values - feat.values)))
            max_rollout_diff = max(max_rollout_diff, diff)

    return ReductionReport(
        epochs=report.epochs_run,
        max_epoch_loss_diff=float(max(loss_diffs)) if loss_diffs else 0.0,
        max_rollout_diff=max_rollout_diff,
        loss_tolerance=tolerance,
        rollout_tolerance=tolerance,
    )
