"""Planted ground-truth generator for desk-scale experiments.

Trajectories are drawn exactly from the simulator's own recurrence under
known projections, so a matched fit has a realizable optimum and rollout
error against the true parameters is exactly zero at zero noise. Embedding
vectors share a common positive component along the first axis, which keeps
batch-level multiplicative coefficients in a stable sub-unit band and the
generated trajectories inside their metric's range.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamics import Curriculum, EmbeddingTable, Run, RunSet, Trajectory
from .errors import ValidationError
from .simulator import SimulatorConfig, SimulatorParams, predict_step, step_factors


@dataclass(frozen=True)
class PlantedGenerator:
    """Geometry and scales of a planted universe.

    ``alpha_center`` is the target mean of the batch multiplicative
    coefficient (kept below 1 so trajectories contract), ``beta_center``
    the target mean of the batch additive coefficient; ``factor_noise``
    controls per-example spread around those targets. The defaults mirror
    loss-like dynamics decaying from ``y_init`` toward
    beta_center / (1 - alpha_center).
    """

    order: int = 1
    embed_dim: int = 16
    proj_dim: int = 8
    num_steps: int = 96
    batch_size: int = 4
    train_pool: int = 200
    test_pool: int = 10
    per_run: int = 128
    noise_sigma: float = 0.0
    metric: str = "loss"
    alpha_center: float = 0.85
    beta_center: float = 0.05
    factor_noise: float = 0.03
    y_init: tuple[float, float] = (1.5, 3.0)

    def __post_init__(self) -> None:
        if self.order < 1 or self.embed_dim < 1 or self.proj_dim < 1:
            raise ValidationError("order, embed_dim, proj_dim must be >= 1")
        if self.num_steps <= self.order:
            raise ValidationError("num_steps must exceed order")
        if self.batch_size < 1 or self.test_pool < 1 or self.train_pool < 1:
            raise ValidationError("pool and batch sizes must be >= 1")
        if not 1 <= self.per_run <= self.train_pool:
            raise ValidationError("per_run must be in 1..train_pool")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if not 0 < self.alpha_center < 1:
            raise ValidationError("alpha_center must be in (0, 1) for stable trajectories")

    @classmethod
    def for_metric(cls, metric: str, **overrides) -> "PlantedGenerator":
        """Defaults tuned per metric kind.

        Bounded metrics get a lower multiplicative center: the steady state
        scales like beta / (1 - alpha), and per-test variation in alpha must
        not push it past the metric ceiling.
        """
        presets = {
            "loss": dict(beta_center=0.05, y_init=(1.5, 3.0)),
            "bleu": dict(alpha_center=0.7, beta_center=3.0, y_init=(2.0, 15.0)),
            "rouge_l": dict(alpha_center=0.7, beta_center=0.05, y_init=(0.05, 0.3)),
        }
        base = presets.get(metric, dict(beta_center=0.05, y_init=(1.5, 3.0)))
        base.update(overrides)
        return cls(metric=metric, **base)


@dataclass(frozen=True)
class PlantedWorld:
    """A sampled universe: embeddings, true projections, and id pools."""

    gen: PlantedGenerator
    embeddings: EmbeddingTable
    true_params: SimulatorParams
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


def _sample_embeddings(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Unit vectors with a dominant positive first component."""
    vecs = 0.4 * rng.standard_normal((n, dim))
    vecs[:, 0] += 2.0
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)


def _lag_shares(order: int) -> np.ndarray:
    shares = 0.5 ** np.arange(order)
    return shares / shares.sum()


def make_planted_world(gen: PlantedGenerator, seed: int) -> PlantedWorld:
    """Sample embeddings and true projections for a planted universe."""
    ss = np.random.SeedSequence(seed)
    rng_embed, rng_params = (np.random.default_rng(s) for s in ss.spawn(2))
    train_ids = tuple(f"train_{i:04d}" for i in range(gen.train_pool))
    test_ids = tuple(f"test_{i:04d}" for i in range(gen.test_pool))
    h_train = _sample_embeddings(rng_embed, gen.train_pool, gen.embed_dim)
    h_test = _sample_embeddings(rng_embed, gen.test_pool, gen.embed_dim)
    entries = list(zip(train_ids, h_train)) + list(zip(test_ids, h_test))
    table = EmbeddingTable(gen.embed_dim, entries)

    # Lead projection columns align with the common embedding component so
    # factor means hit their targets; remaining columns add per-pair spread.
    mean_tr = float(h_train[:, 0].mean())
    mean_te = float(h_test[:, 0].mean())
    d, p = gen.embed_dim, gen.proj_dim

    def project_pair(target_mean: float, spread: float) -> tuple[np.ndarray, np.ndarray]:
        lead = np.sqrt(abs(target_mean) / (mean_tr * mean_te))
        w = np.zeros((d, p))
        u = np.zeros((d, p))
        w[0, 0] = lead * np.sign(target_mean)
        u[0, 0] = lead
        # Noise columns stay orthogonal to the shared embedding component
        # (first row zero) so they spread factors per pair without shifting
        # any test example's mean coefficient; drifting a mean above 1
        # would make that example's recurrence explosive.
        if p > 1 and d > 1:
            eps = np.sqrt(spread / np.sqrt(p - 1))
            w[1:, 1:] = eps * rng_params.standard_normal((d - 1, p - 1))
            u[1:, 1:] = eps * rng_params.standard_normal((d - 1, p - 1))
        elif d > 1:
            w[1:, 0] = spread * rng_params.standard_normal(d - 1)
        return w, u

    shares = _lag_shares(gen.order)
    per_example_alpha = gen.alpha_center / gen.batch_size
    per_example_beta = gen.beta_center / gen.batch_size
    spread = gen.factor_noise / gen.batch_size
    w_mul, u_mul = [], []
    for share in shares:
        # noise scales with the lag's share so total coefficient variance
        # stays comparable across orders
        w, u = project_pair(per_example_alpha * share, spread * share)
        w_mul.append(w)
        u_mul.append(u)
    w_add, u_add = project_pair(per_example_beta, spread * gen.beta_center / max(gen.alpha_center, 1e-9))
    config = SimulatorConfig(
        embed_dim=d, order=gen.order, proj_dim=p, metric=gen.metric, seed=seed
    )
    true_params = SimulatorParams(
        config=config,
        train_mul=tuple(w_mul),
        test_mul=tuple(u_mul),
        train_add=w_add,
        test_add=u_add,
    )
    return PlantedWorld(
        gen=gen,
        embeddings=table,
        true_params=true_params,
        train_ids=train_ids,
        test_ids=test_ids,
    )


def _epoch_curriculum(
    rng: np.random.Generator, subset: Sequence[str], num_steps: int, batch_size: int
) -> Curriculum:
    """Shuffled epochs over the subset, chunked into fixed-size batches."""
    needed = num_steps * batch_size
    order: list[str] = []
    while len(order) < needed:
        order.extend(subset[i] for i in rng.permutation(len(subset)))
    batches = tuple(
        tuple(order[t * batch_size : (t + 1) * batch_size]) for t in range(num_steps)
    )
    return Curriculum(batches)


def sample_planted_runs(
    world: PlantedWorld,
    n_runs: int,
    seed: int,
    pool_ids: Sequence[str] | None = None,
    run_prefix: str = "run",
) -> RunSet:
    """Sample curricula from (a subset of) the world's train pool and plant
    trajectories from the true recurrence plus Gaussian observation noise.

    Generated values must respect the metric's range; a violation aborts
    with a hint to adjust scales or seed rather than silently clamping.
    """
    gen = world.gen
    pool = list(pool_ids) if pool_ids is not None else list(world.train_ids)
    if gen.per_run > len(pool):
        raise ValidationError(
            f"per_run {gen.per_run} exceeds pool of {len(pool)} ids"
        )
    unknown = [ex for ex in pool if ex not in world.embeddings]
    if unknown:
        raise ValidationError(f"pool ids without embeddings: {unknown[:5]}")
    n = gen.order
    runs = []
    for k in range(n_runs):
        rng = np.random.default_rng(np.random.SeedSequence((seed, k)))
        subset = [pool[i] for i in rng.choice(len(pool), size=gen.per_run, replace=False)]
        curriculum = _epoch_curriculum(rng, subset, gen.num_steps, gen.batch_size)
        batch_embeds = [
            [world.embeddings.get(ex) for ex in batch] for batch in curriculum.batches
        ]
        trajectories = {}
        for tid in world.test_ids:
            h_test = world.embeddings.get(tid)
            vals = np.empty(gen.num_steps)
            vals[:n] = rng.uniform(gen.y_init[0], gen.y_init[1], size=n)
            for t in range(n + 1, gen.num_steps + 1):
                alpha, beta = step_factors(world.true_params, batch_embeds[t - 1], h_test)
                y = predict_step(alpha, beta, vals[t - 1 - n : t - 1][::-1])
                if gen.noise_sigma > 0:
                    y += gen.noise_sigma * rng.standard_normal()
                vals[t - 1] = y
            traj = Trajectory(test_id=tid, metric=gen.metric, values=vals)
            traj.check_metric_range(f"{run_prefix}_{k:03d}")
            # catches genuine explosions; wide-but-stable excursions pass
            cap = 50.0 * max(abs(gen.y_init[0]), abs(gen.y_init[1]), 1.0)
            if np.max(np.abs(vals)) > cap:
                raise ValidationError(
                    f"planted trajectory escaped ({run_prefix}_{k:03d}, {tid}): "
                    f"max |y| {np.max(np.abs(vals)):.3g} > {cap}; lower alpha_center "
                    f"or factor_noise, or pick another seed"
                )
            trajectories[(tid, gen.metric)] = traj
        runs.append(
            Run(
                run_id=f"{run_prefix}_{k:03d}",
                curriculum=curriculum,
                trajectories=trajectories,
                tags={"source": "planted", "metric": gen.metric},
            )
        )
    return RunSet(runs)


def generate_planted_runs(
    gen: PlantedGenerator, n_runs: int, seed: int
) -> tuple[RunSet, EmbeddingTable, SimulatorParams]:
    """Sample a universe and runs in one call; returns the true projections
    for recovery checks."""
    world = make_planted_world(gen, seed)
    runs = sample_planted_runs(world, n_runs, seed)
    return runs, world.embeddings, world.true_params


def split_pool_for_unseen(
    world: PlantedWorld, unseen_fraction: float
) -> tuple[list[str], list[str]]:
    """Partition the train pool into (seen, unseen) ids; the unseen slice is
    the tail of the pool, deterministic by construction."""
    if not 0 <= unseen_fraction < 1:
        raise ValidationError("unseen_fraction must be in [0, 1)")
    n_unseen = int(unseen_fraction * len(world.train_ids))
    ids = list(world.train_ids)
    if n_unseen == 0:
        return ids, []
    return ids[:-n_unseen], ids[-n_unseen:]
