"""Mislabelled-data identification via self-influence ranking.

Examples are ranked by how strongly a method says they influence
themselves; persistently self-reinforcing examples tend to be the ones
fighting the rest of the data. The detection curve reports, for each
inspected fraction of the ranking, which share of the known-flipped ids
has been found, alongside the random-inspection expectation (the
diagonal).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .baselines import GradientDump, tracin_influence
from .dynamics import EmbeddingTable
from .errors import ValidationError
from .simulator import SimulatorParams, influence_factors

DEFAULT_FRACTIONS = tuple(round(0.05 * k, 2) for k in range(1, 21))


def self_influence_featurized(
    params: SimulatorParams, embeddings: EmbeddingTable, train_id: str
) -> float:
    """Lag-1 multiplicative factor of an example on itself."""
    h = embeddings.get(train_id)
    a, _ = influence_factors(params, h, h)
    return float(a[0])


def self_influence_tracin(dump: GradientDump, train_id: str) -> float:
    """Checkpoint-ensembled gradient dot product of an example with itself."""
    return tracin_influence(dump, train_id, train_id)


@dataclass(frozen=True)
class CurvePoint:
    fraction: float
    found: float
    expected_random: float


def detection_curve(
    scores: Mapping[str, float],
    flipped: Iterable[str],
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
) -> list[CurvePoint]:
    """Fraction of flipped ids found in each top score-ranked slice.

    Ids are ranked by descending score with ties broken lexicographically.
    With no flipped ids the curve is trivially 1 everywhere.
    """
    if not scores:
        raise ValidationError("empty scores")
    flipped = set(flipped)
    unknown = flipped - set(scores)
    if unknown:
        raise ValidationError(f"flipped ids without scores: {sorted(unknown)[:5]}")
    ranked = sorted(scores, key=lambda ex: (-scores[ex], ex))
    n = len(ranked)
    points = []
    for f in fractions:
        if not 0.0 <= f <= 1.0:
            raise ValidationError(f"inspected fraction must be in [0, 1], got {f}")
        k = int(round(f * n))
        if flipped:
            found = sum(1 for ex in ranked[:k] if ex in flipped) / len(flipped)
        else:
            found = 1.0
        points.append(CurvePoint(fraction=float(f), found=found, expected_random=float(f)))
    return points


def random_baseline_curve(
    ids: Sequence[str],
    flipped: Iterable[str],
    n_seeds: int = 10,
    seed: int = 0,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
) -> list[CurvePoint]:
    """Average detection curve of random rankings over ``n_seeds`` shuffles."""
    if n_seeds < 1:
        raise ValidationError("n_seeds must be >= 1")
    ids = list(ids)
    flipped = set(flipped)
    acc = np.zeros(len(fractions))
    for s in range(n_seeds):
        rng = np.random.default_rng(np.random.SeedSequence((seed, s)))
        ranks = rng.permutation(len(ids))
        scores = {ex: float(ranks[i]) for i, ex in enumerate(ids)}
        curve = detection_curve(scores, flipped, fractions)
        acc += [pt.found for pt in curve]
    acc /= n_seeds
    return [
        CurvePoint(fraction=float(f), found=float(v), expected_random=float(f))
        for f, v in zip(fractions, acc)
    ]
