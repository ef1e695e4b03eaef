"""Training-dynamics data model: curricula, trajectories, runs, embeddings.

File formats are line-oriented JSON (UTF-8). A run file holds one run
object per line; an embedding file holds a ``{"dim": d}`` header line
followed by one ``{"id": ..., "vec": [...]}`` object per line. Floats are
written with Python's shortest round-trip repr, so save followed by load
reproduces values exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    MissingEmbeddingError,
    MissingTrajectoryError,
    ParseError,
    ValidationError,
)

# Known metric kinds and their valid value ranges (min, max); None means
# unbounded on that side. Other metric names are accepted as custom scalars
# with no range constraint.
METRIC_RANGES: dict[str, tuple[float | None, float | None]] = {
    "loss": (0.0, None),
    "bleu": (0.0, 100.0),
    "rouge_l": (0.0, 1.0),
}


def metric_range(metric: str) -> tuple[float | None, float | None]:
    return METRIC_RANGES.get(metric, (None, None))


def _json_line(obj: Any) -> str:
    # allow_nan=False keeps files portable; repr-based floats round-trip.
    return json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n"


@dataclass(frozen=True)
class Curriculum:
    """Ordered training batches. Step indices are 1-based and contiguous."""

    batches: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "batches", tuple(tuple(b) for b in self.batches)
        )
        if len(self.batches) < 1:
            raise ValidationError("curriculum must have at least one step")
        for t, batch in enumerate(self.batches, start=1):
            if len(batch) == 0:
                raise ValidationError(f"curriculum step {t}: empty batch")
            for ex in batch:
                if not isinstance(ex, str) or not ex:
                    raise ValidationError(
                        f"curriculum step {t}: example ids must be non-empty strings"
                    )

    @property
    def num_steps(self) -> int:
        return len(self.batches)

    def batch(self, step: int) -> tuple[str, ...]:
        """Batch consumed at 1-based step ``step``."""
        if not 1 <= step <= self.num_steps:
            raise ValidationError(f"step {step} outside 1..{self.num_steps}")
        return self.batches[step - 1]

    def train_ids(self) -> set[str]:
        return {ex for batch in self.batches for ex in batch}


@dataclass(frozen=True)
class Trajectory:
    """Per-step scores of one test example under one metric."""

    test_id: str
    metric: str
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError(
                f"trajectory ({self.test_id}, {self.metric}): values must be a non-empty 1-d sequence"
            )
        if not np.all(np.isfinite(arr)):
            raise ValidationError(
                f"trajectory ({self.test_id}, {self.metric}): values must be finite"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        if not self.test_id:
            raise ValidationError("trajectory test_id must be non-empty")
        if not self.metric:
            raise ValidationError("trajectory metric must be non-empty")

    def __len__(self) -> int:
        return int(self.values.size)

    def final(self) -> float:
        return float(self.values[-1])

    def check_metric_range(self, run_id: str = "?") -> None:
        """Enforce the metric's value range (observed dynamics only).

        Model predictions are exempt: a linear simulator may legitimately
        overshoot a bounded metric, so range enforcement happens when runs
        are loaded or generated as ground truth, not at construction.
        """
        lo, hi = metric_range(self.metric)
        if lo is not None and float(self.values.min()) < lo:
            raise ValidationError(
                f"run {run_id}: trajectory ({self.test_id}, {self.metric}) "
                f"has value {self.values.min()} below metric minimum {lo}"
            )
        if hi is not None and float(self.values.max()) > hi:
            raise ValidationError(
                f"run {run_id}: trajectory ({self.test_id}, {self.metric}) "
                f"has value {self.values.max()} above metric maximum {hi}"
            )


@dataclass(frozen=True)
class Run:
    """One training run: a curriculum plus test-metric trajectories.

    Trajectory values are aligned to post-update measurements: values[t-1]
    is the score recorded after the batch at step t was consumed.
    """

    run_id: str
    curriculum: Curriculum
    trajectories: Mapping[tuple[str, str], Trajectory]
    tags: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.run_id or not isinstance(self.run_id, str):
            raise ValidationError("run_id must be a non-empty string")
        traj = dict(self.trajectories)
        object.__setattr__(self, "trajectories", traj)
        object.__setattr__(self, "tags", dict(self.tags))
        if not traj:
            raise ValidationError(f"run {self.run_id}: at least one trajectory required")
        T = self.curriculum.num_steps
        for (test_id, metric), t in traj.items():
            if t.test_id != test_id or t.metric != metric:
                raise ValidationError(
                    f"run {self.run_id}: trajectory key ({test_id}, {metric}) "
                    f"does not match trajectory fields ({t.test_id}, {t.metric})"
                )
            if len(t) != T:
                raise ValidationError(
                    f"run {self.run_id}: length mismatch: trajectory ({test_id}, {metric}) "
                    f"has {len(t)} values, curriculum has {T} steps"
                )
        overlap = self.curriculum.train_ids() & {tid for tid, _ in traj}
        if overlap:
            raise ValidationError(
                f"run {self.run_id}: ids {sorted(overlap)} appear both in training "
                f"batches and as test ids; roles are fixed per example"
            )

    @property
    def num_steps(self) -> int:
        return self.curriculum.num_steps

    def trajectory(self, test_id: str, metric: str) -> Trajectory:
        try:
            return self.trajectories[(test_id, metric)]
        except KeyError:
            raise MissingTrajectoryError(
                f"run {self.run_id}: no trajectory for ({test_id}, {metric})"
            ) from None

    def test_ids(self, metric: str | None = None) -> list[str]:
        seen: list[str] = []
        for tid, m in self.trajectories:
            if (metric is None or m == metric) and tid not in seen:
                seen.append(tid)
        return seen

    def metrics(self) -> list[str]:
        out: list[str] = []
        for _, m in self.trajectories:
            if m not in out:
                out.append(m)
        return out

    def train_ids(self) -> set[str]:
        return self.curriculum.train_ids()

    def check_metric_ranges(self) -> None:
        for t in self.trajectories.values():
            t.check_metric_range(self.run_id)


class RunSet(Sequence[Run]):
    """An immutable collection of validated runs with unique run_ids."""

    def __init__(self, runs: Iterable[Run]):
        self._runs = tuple(runs)
        by_id: dict[str, Run] = {}
        for run in self._runs:
            if run.run_id in by_id:
                raise ValidationError(f"duplicate run_id {run.run_id!r}")
            by_id[run.run_id] = run
        self._by_id = by_id
        train = set().union(*(r.train_ids() for r in self._runs)) if self._runs else set()
        test = {tid for r in self._runs for tid, _ in r.trajectories}
        overlap = train & test
        if overlap:
            raise ValidationError(
                f"ids {sorted(overlap)[:5]} appear as train ids in one run and "
                f"test ids in another; roles are fixed per example"
            )

    def __len__(self) -> int:
        return len(self._runs)

    def __getitem__(self, i):  # type: ignore[override]
        if isinstance(i, slice):
            return RunSet(self._runs[i])
        return self._runs[i]

    def __iter__(self) -> Iterator[Run]:
        return iter(self._runs)

    def get(self, run_id: str) -> Run:
        try:
            return self._by_id[run_id]
        except KeyError:
            raise ValidationError(f"no run with run_id {run_id!r}") from None

    def run_ids(self) -> list[str]:
        return [r.run_id for r in self._runs]

    def train_ids(self) -> set[str]:
        out: set[str] = set()
        for r in self._runs:
            out |= r.train_ids()
        return out

    def test_ids(self) -> set[str]:
        return {tid for r in self._runs for tid, _ in r.trajectories}

    def metrics(self) -> list[str]:
        out: list[str] = []
        for r in self._runs:
            for m in r.metrics():
                if m not in out:
                    out.append(m)
        return out


def _expect(obj: Mapping[str, Any], key: str, kind: type, where: str) -> Any:
    if key not in obj:
        raise ParseError(f"{where}: missing field {key!r}")
    val = obj[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ParseError(f"{where}: field {key!r} must be a number")
        return float(val)
    if not isinstance(val, kind):
        raise ParseError(f"{where}: field {key!r} must be {kind.__name__}")
    return val


def _parse_run(obj: Any, where: str) -> Run:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: run record must be a JSON object")
    run_id = _expect(obj, "run_id", str, where)
    tags = obj.get("tags", {})
    if not isinstance(tags, dict):
        raise ParseError(f"{where}: field 'tags' must be an object")
    steps = _expect(obj, "steps", list, where)
    batches: list[tuple[str, ...]] = []
    for i, step_obj in enumerate(steps):
        if not isinstance(step_obj, dict):
            raise ParseError(f"{where}: steps[{i}] must be an object")
        idx = _expect(step_obj, "step", int, f"{where}: steps[{i}]")
        if idx != i + 1:
            raise ValidationError(
                f"{where}: run {run_id}: step indices must be contiguous from 1; "
                f"got {idx} at position {i}"
            )
        batch = _expect(step_obj, "batch", list, f"{where}: steps[{i}]")
        for ex in batch:
            if not isinstance(ex, str):
                raise ParseError(f"{where}: steps[{i}]: batch ids must be strings")
        batches.append(tuple(batch))
    traj_objs = _expect(obj, "trajectories", list, where)
    trajectories: dict[tuple[str, str], Trajectory] = {}
    for i, tobj in enumerate(traj_objs):
        if not isinstance(tobj, dict):
            raise ParseError(f"{where}: trajectories[{i}] must be an object")
        test_id = _expect(tobj, "test_id", str, f"{where}: trajectories[{i}]")
        metric = _expect(tobj, "metric", str, f"{where}: trajectories[{i}]")
        values = _expect(tobj, "values", list, f"{where}: trajectories[{i}]")
        for v in values:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ParseError(
                    f"{where}: trajectories[{i}]: values must be numbers"
                )
        key = (test_id, metric)
        if key in trajectories:
            raise ValidationError(
                f"{where}: run {run_id}: duplicate trajectory for {key}"
            )
        trajectories[key] = Trajectory(test_id=test_id, metric=metric, values=np.asarray(values, dtype=np.float64))
    return Run(run_id=run_id, curriculum=Curriculum(tuple(batches)), trajectories=trajectories, tags=tags)


def _run_files(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix == ".jsonl")
        if not files:
            raise ValidationError(f"{path}: directory contains no .jsonl run files")
        return files
    if path.is_file():
        return [path]
    raise FileNotFoundError(f"no such file or directory: {path}")


def load_runs(path: str | Path, validate_ranges: bool = True) -> RunSet:
    """Load a run file or a directory of run files.

    Args:
        path: a ``.jsonl`` file (one run per line) or a directory of them.
        validate_ranges: enforce per-metric value ranges. Leave on for
            observed dynamics; turn off when loading model predictions,
            which may overshoot bounded metrics.

    Returns:
        A validated RunSet. Raises ParseError/ValidationError on bad input.
    """
    runs: list[Run] = []
    for f in _run_files(Path(path)):
        with open(f, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                where = f"{f}:{lineno}"
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ParseError(f"{where}: malformed JSON: {e}") from None
                run = _parse_run(obj, where)
                if validate_ranges:
                    run.check_metric_ranges()
                runs.append(run)
    return RunSet(runs)


def _run_to_obj(run: Run) -> dict[str, Any]:
    return {
        "run_id": run.run_id,
        "tags": dict(run.tags),
        "steps": [
            {"step": t, "batch": list(batch)}
            for t, batch in enumerate(run.curriculum.batches, start=1)
        ],
        "trajectories": [
            {"test_id": t.test_id, "metric": t.metric, "values": [float(v) for v in t.values]}
            for t in run.trajectories.values()
        ],
    }


def save_runs(runs: Iterable[Run], path: str | Path) -> list[Path]:
    """Write runs to ``path``: a single file if it ends in .jsonl, else a
    directory with one ``<run_id>.jsonl`` per run. Returns written paths."""
    p = Path(path)
    runs = list(runs)
    if p.suffix == ".jsonl":
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", encoding="utf-8") as fh:
            for run in runs:
                fh.write(_json_line(_run_to_obj(run)))
        return [p]
    p.mkdir(parents=True, exist_ok=True)
    written = []
    for run in runs:
        if os.sep in run.run_id or run.run_id.startswith("."):
            raise ValidationError(
                f"run_id {run.run_id!r} is not a safe file name; save to a single .jsonl file instead"
            )
        out = p / f"{run.run_id}.jsonl"
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(_json_line(_run_to_obj(run)))
        written.append(out)
    return written


def split_runs(
    runs: RunSet, n_train: int, n_val: int, n_test: int, seed: int
) -> tuple[RunSet, RunSet, RunSet]:
    """Seed-deterministic disjoint partition into (train, val, test)."""
    for name, n in (("n_train", n_train), ("n_val", n_val), ("n_test", n_test)):
        if n < 0:
            raise ValidationError(f"{name} must be >= 0")
    total = n_train + n_val + n_test
    if total > len(runs):
        raise ValidationError(
            f"insufficient runs: need {total}, have {len(runs)}"
        )
    ordered = sorted(runs, key=lambda r: r.run_id)
    perm = np.random.default_rng(seed).permutation(len(ordered))
    picked = [ordered[i] for i in perm]
    train = RunSet(picked[:n_train])
    val = RunSet(picked[n_train : n_train + n_val])
    test = RunSet(picked[n_train + n_val : total])
    return train, val, test


def subsample_run(run: Run, interval: int) -> Run:
    """Keep steps k, 2k, ... only, merging each window of k consumed batches
    into one deduplicated batch; retained trajectory values are the original
    values at the retained steps."""
    k = int(interval)
    if k < 1:
        raise ValidationError(f"interval must be >= 1, got {k}")
    T = run.num_steps
    if k > T:
        raise ValidationError(f"interval {k} exceeds run length {T}")
    if k == 1:
        return run
    retained = list(range(k, T + 1, k))
    batches: list[tuple[str, ...]] = []
    for t in retained:
        merged: list[str] = []
        seen: set[str] = set()
        for s in range(t - k + 1, t + 1):
            for ex in run.curriculum.batch(s):
                if ex not in seen:
                    seen.add(ex)
                    merged.append(ex)
        batches.append(tuple(merged))
    keep = [t - 1 for t in retained]
    trajectories = {
        key: Trajectory(test_id=t.test_id, metric=t.metric, values=t.values[keep])
        for key, t in run.trajectories.items()
    }
    return Run(
        run_id=run.run_id,
        curriculum=Curriculum(tuple(batches)),
        trajectories=trajectories,
        tags=run.tags,
    )


class EmbeddingTable:
    """Frozen feature vectors per example id, unit L2 norm after load.

    Vectors whose norm is already within 1e-12 of 1 are left untouched so
    that save followed by load is exact.
    """

    def __init__(self, dim: int, entries: Iterable[tuple[str, np.ndarray]], normalize: bool = True):
        dim = int(dim)
        if dim < 1:
            raise ValidationError(f"embedding dim must be >= 1, got {dim}")
        self._dim = dim
        self._entries: dict[str, np.ndarray] = {}
        for ex_id, vec in entries:
            if not ex_id or not isinstance(ex_id, str):
                raise ValidationError("embedding ids must be non-empty strings")
            if ex_id in self._entries:
                raise ValidationError(f"duplicate embedding id {ex_id!r}")
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (dim,):
                raise ValidationError(
                    f"ragged vectors: embedding for {ex_id!r} has shape {arr.shape}, expected ({dim},)"
                )
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"embedding for {ex_id!r} has non-finite entries")
            if normalize:
                norm = float(np.linalg.norm(arr))
                if norm == 0.0:
                    raise ValidationError(f"zero-norm embedding for {ex_id!r}")
                if abs(norm - 1.0) > 1e-12:
                    arr = arr / norm
            arr = arr.copy()
            arr.setflags(write=False)
            self._entries[ex_id] = arr

    @property
    def dim(self) -> int:
        return self._dim

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, ex_id: str) -> bool:
        return ex_id in self._entries

    def ids(self) -> list[str]:
        return list(self._entries)

    def get(self, ex_id: str) -> np.ndarray:
        try:
            return self._entries[ex_id]
        except KeyError:
            raise MissingEmbeddingError(f"no embedding for example {ex_id!r}") from None

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self._entries.items())

    def matrix(self, ids: Sequence[str]) -> np.ndarray:
        """Stack embeddings for ``ids`` into an (len(ids), dim) array."""
        return np.stack([self.get(i) for i in ids]) if ids else np.zeros((0, self._dim))


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Load an embedding table; vectors are unit-normalized on load."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    with open(p, encoding="utf-8") as fh:
        lines = [(i + 1, line) for i, line in enumerate(fh) if line.strip()]
    if not lines:
        raise ParseError(f"{p}: empty embedding file, expected a dim header")
    lineno, header_line = lines[0]
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as e:
        raise ParseError(f"{p}:{lineno}: malformed JSON: {e}") from None
    if not isinstance(header, dict) or "dim" not in header or isinstance(header["dim"], bool) or not isinstance(header["dim"], int):
        raise ParseError(f"{p}:{lineno}: first line must be a {{\"dim\": d}} header")
    dim = header["dim"]
    entries: list[tuple[str, np.ndarray]] = []
    for lineno, line in lines[1:]:
        where = f"{p}:{lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"{where}: malformed JSON: {e}") from None
        if not isinstance(obj, dict):
            raise ParseError(f"{where}: embedding record must be a JSON object")
        ex_id = _expect(obj, "id", str, where)
        vec = _expect(obj, "vec", list, where)
        if len(vec) != dim:
            raise ValidationError(
                f"{where}: ragged vectors: entry for {ex_id!r} has length {len(vec)}, header dim is {dim}"
            )
        for v in vec:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ParseError(f"{where}: vector entries must be numbers")
        entries.append((ex_id, np.asarray(vec, dtype=np.float64)))
    try:
        return EmbeddingTable(dim, entries)
    except ValidationError as e:
        raise ValidationError(f"{p}: {e}") from None


def save_embeddings(table: EmbeddingTable, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as fh:
        fh.write(_json_line({"dim": table.dim}))
        for ex_id, vec in table.items():
            fh.write(_json_line({"id": ex_id, "vec": [float(v) for v in vec]}))
    return p
