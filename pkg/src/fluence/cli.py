"""Command-line pipeline: generate synthetic dynamics, fit simulators,
simulate trajectories, evaluate, run baselines, rank suspected mislabels,
run the reduction equivalence check, and sweep ablations.

Exit codes: 0 success, 1 validation/usage error, 2 I/O error, 3 numerical
failure. Every run is deterministic given identical flags; option values
resolve as flags > --config file (key=value lines) > built-in defaults,
with the FLUENCE_SEED environment variable as the seed fallback.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from . import baselines, dynamics, evalmetrics, mislabel, reduction, simulator, synthetic, toy
from .errors import DataError, NumericalError, UsageError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{message}\n{self.format_usage()}")


def _write_json(path: str | Path, obj: Any) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return p


def _write_csv(path: str | Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("" if v is None else str(v) for v in row) + "\n")
    return p


def _map_ordered(fn: Callable, items: Sequence, threads: int) -> list:
    if threads > 1 and len(items) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _load_config_file(path: str) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such config file: {p}")
    out: dict[str, str] = {}
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{p}:{lineno}: expected key=value, got {line!r}")
        key, val = line.split("=", 1)
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def _coerce(value: str, like: Any) -> Any:
    if isinstance(like, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"cannot parse boolean from {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def _resolve(args: argparse.Namespace, defaults: Mapping[str, Any]) -> None:
    """Apply flags > config file > defaults (> FLUENCE_SEED for seed)."""
    file_cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}
    for key, default in defaults.items():
        if getattr(args, key, None) is not None:
            continue
        if key in file_cfg:
            like = default if default is not None else ""
            if key in _INT_LIKE:
                like = 0
            elif key in _FLOAT_LIKE:
                like = 0.0
            setattr(args, key, _coerce(file_cfg[key], like))
        elif key == "seed" and os.environ.get("FLUENCE_SEED"):
            setattr(args, key, int(os.environ["FLUENCE_SEED"]))
        else:
            setattr(args, key, default)


_INT_LIKE = {
    "seed", "order", "proj_dim", "warmup", "epochs", "batch_size", "patience",
    "runs_count", "pool", "per_run", "steps", "test_pool", "classes",
    "features", "checkpoint_interval", "threads",
}
_FLOAT_LIKE = {"l2_lambda", "lr", "noise_sigma", "corrupt", "separation", "toy_lr", "tolerance"}

_FIT_DEFAULTS: dict[str, Any] = {
    "metric": "loss",
    "order": 1,
    "proj_dim": 64,
    "l2_lambda": 1e-5,
    "lr": 1e-4,
    "warmup": 200,
    "epochs": 300,
    "batch_size": 128,
    "patience": 10,
    "seed": 42,
    "share_projections": False,
    "threads": 1,
}


def _add_config_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags take precedence")


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--metric", help="metric kind to fit (default loss)")
    p.add_argument("--order", type=int, help="recurrence order n (default 1)")
    p.add_argument("--proj-dim", dest="proj_dim", type=int, help="projection width p (default 64)")
    p.add_argument("--lambda", dest="l2_lambda", type=float, help="L2 penalty weight (default 1e-5)")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-4)")
    p.add_argument("--warmup", type=int, help="linear warmup steps (default 200)")
    p.add_argument("--epochs", type=int, help="max training epochs (default 300)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="targets per optimizer step (default 128)")
    p.add_argument("--patience", type=int, help="early-stop patience in epochs, 0 disables (default 10)")
    p.add_argument("--seed", type=int, help="random seed (default 42 or FLUENCE_SEED)")
    p.add_argument(
        "--share-projections",
        dest="share_projections",
        action=argparse.BooleanOptionalAction,
        help="tie multiplicative projections across lags",
    )


def _sim_config(args: argparse.Namespace, embed_dim: int, metric: str | None = None) -> simulator.SimulatorConfig:
    return simulator.SimulatorConfig(
        embed_dim=embed_dim,
        order=args.order,
        proj_dim=args.proj_dim,
        l2_lambda=args.l2_lambda,
        learning_rate=args.lr,
        warmup_steps=args.warmup,
        max_epochs=args.epochs,
        batch_size=args.batch_size,
        early_stop_patience=args.patience,
        seed=args.seed,
        metric=metric if metric is not None else args.metric,
        share_projections=bool(args.share_projections),
    )


def _predict_featurized(
    params: simulator.SimulatorParams,
    runs: dynamics.RunSet,
    table: dynamics.EmbeddingTable,
    threads: int,
) -> dynamics.RunSet:
    metric = params.config.metric

    def one(run: dynamics.Run) -> dynamics.Run:
        trajectories = {
            (tid, metric): simulator.rollout(params, run, table, tid)
            for tid in run.test_ids(metric)
        }
        return dynamics.Run(
            run_id=run.run_id,
            curriculum=run.curriculum,
            trajectories=trajectories,
            tags={**run.tags, "prediction": "featurized"},
        )

    return dynamics.RunSet(_map_ordered(one, list(runs), threads))


def _predict_per_id(
    params: baselines.SimfluenceParams, runs: dynamics.RunSet, threads: int
) -> dynamics.RunSet:
    metric = params.config.metric

    def one(run: dynamics.Run) -> dynamics.Run:
        trajectories = {
            (tid, metric): baselines.simfluence_rollout(params, run, tid)
            for tid in run.test_ids(metric)
        }
        return dynamics.Run(
            run_id=run.run_id,
            curriculum=run.curriculum,
            trajectories=trajectories,
            tags={**run.tags, "prediction": "simfluence"},
        )

    return dynamics.RunSet(_map_ordered(one, list(runs), threads))


def _report_for(
    pred: dynamics.RunSet, truth: dynamics.RunSet, metric: str, order: int
) -> evalmetrics.EvalReport:
    return evalmetrics.aggregate(evalmetrics.compare_runsets(pred, truth, metric, order))


# ---------------------------------------------------------------- generate


def cmd_generate(args: argparse.Namespace) -> int:
    out = Path(args.out)
    if args.kind == "planted":
        _resolve(args, {
            "runs_count": 32, "pool": 200, "per_run": 128, "steps": 96,
            "batch_size": 4, "test_pool": 10, "metric": "loss", "order": 1,
            "embed_dim": 16, "proj_dim": 8, "noise_sigma": 0.0, "seed": 42,
        })
        gen = synthetic.PlantedGenerator.for_metric(
            args.metric,
            order=args.order,
            embed_dim=args.embed_dim,
            proj_dim=args.proj_dim,
            num_steps=args.steps,
            batch_size=args.batch_size,
            train_pool=args.pool,
            test_pool=args.test_pool,
            per_run=args.per_run,
            noise_sigma=args.noise_sigma,
        )
        runs, table, true_params = synthetic.generate_planted_runs(gen, args.runs_count, args.seed)
        dynamics.save_runs(runs, out / "runs")
        dynamics.save_embeddings(table, out / "embeddings.jsonl")
        simulator.save_model(true_params, out / "true_model.json")
        _write_json(out / "manifest.json", {
            "kind": "planted", "seed": args.seed, "runs": args.runs_count,
            "pool": args.pool, "per_run": args.per_run, "steps": args.steps,
            "batch_size": args.batch_size, "test_pool": args.test_pool,
            "metric": args.metric, "order": args.order,
            "embed_dim": args.embed_dim, "proj_dim": args.proj_dim,
            "noise_sigma": args.noise_sigma,
        })
        _log(f"wrote {len(runs)} planted runs to {out}")
        return EXIT_OK

    _resolve(args, {
        "runs_count": 1, "pool": 200, "test_pool": 10, "steps": 50,
        "batch_size": 8, "per_run": None, "classes": 2, "features": 10,
        "toy_lr": 1e-3, "checkpoint_interval": 1, "corrupt": 0.0,
        "separation": 3.0, "seed": 42,
    })
    dataset = toy.make_toy_dataset(
        n_train=args.pool,
        n_test=args.test_pool,
        n_classes=args.classes,
        n_features=args.features,
        seed=args.seed,
        separation=args.separation,
    )
    flipped: set[str] = set()
    if args.corrupt > 0:
        dataset, flipped = toy.corrupt_labels(dataset, args.corrupt, args.seed)
    cfg = toy.ToyRunConfig(
        n_runs=args.runs_count,
        num_steps=args.steps,
        batch_size=args.batch_size,
        per_run=args.per_run,
        learning_rate=args.toy_lr,
        checkpoint_interval=args.checkpoint_interval,
        seed=args.seed,
    )
    runs, table, dumps = toy.train_toy_and_record(dataset, cfg)
    dynamics.save_runs(runs, out / "runs")
    dynamics.save_embeddings(table, out / "embeddings.jsonl")
    for run_id, dump in dumps.items():
        baselines.save_dump(dump, out / "dumps" / f"{run_id}.jsonl")
    _write_json(out / "labels.json", {
        "labels": {ex: int(v) for ex, v in zip(dataset.train_ids, dataset.y_train)},
        "test_labels": {ex: int(v) for ex, v in zip(dataset.test_ids, dataset.y_test)},
        "flipped": sorted(flipped),
        "corrupt_fraction": args.corrupt,
    })
    _write_json(out / "manifest.json", {
        "kind": "toy", "seed": args.seed, "runs": args.runs_count,
        "pool": args.pool, "per_run": args.per_run, "steps": args.steps,
        "batch_size": args.batch_size, "test_pool": args.test_pool,
        "classes": args.classes, "features": args.features,
        "learning_rate": args.toy_lr, "checkpoint_interval": args.checkpoint_interval,
        "corrupt_fraction": args.corrupt, "separation": args.separation,
    })
    _log(f"wrote {len(runs)} toy runs to {out}")
    return EXIT_OK


# --------------------------------------------------------------------- fit


def cmd_fit(args: argparse.Namespace) -> int:
    _resolve(args, _FIT_DEFAULTS)
    table = dynamics.load_embeddings(args.embeddings)
    runs_train = dynamics.load_runs(args.runs)
    runs_val = dynamics.load_runs(args.val)
    config = _sim_config(args, table.dim)
    params, report = simulator.fit(runs_train, runs_val, table, config)
    simulator.save_model(params, args.out)
    _log(
        f"fit {config.metric}: {report.epochs_run} epochs "
        f"(best {report.best_epoch}, val mse {min(report.val_mse_per_epoch):.4g}) -> {args.out}"
    )
    if args.report_out:
        _write_json(args.report_out, {
            "epochs_run": report.epochs_run,
            "best_epoch": report.best_epoch,
            "stopped_early": report.stopped_early,
            "train_loss_per_epoch": report.train_loss_per_epoch,
            "val_mse_per_epoch": report.val_mse_per_epoch,
        })
    return EXIT_OK


# ---------------------------------------------------------------- simulate


def cmd_simulate(args: argparse.Namespace) -> int:
    _resolve(args, {"threads": 1})
    params = simulator.load_model(args.model)
    table = dynamics.load_embeddings(args.embeddings)
    truth = dynamics.load_runs(args.runs)
    pred = _predict_featurized(params, truth, table, args.threads)
    dynamics.save_runs(pred, args.out)
    _log(f"simulated {len(pred)} runs ({params.config.metric}) -> {args.out}")
    if args.plots:
        from . import plots

        path = plots.plot_trajectories(
            truth, pred, params.config.metric,
            Path(args.plots) / f"trajectories_{params.config.metric}.png",
        )
        _log(f"figure -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------- evaluate


def cmd_evaluate(args: argparse.Namespace) -> int:
    _resolve(args, {"order": 1, "threads": 1})
    truth = dynamics.load_runs(args.truth)
    pred = dynamics.load_runs(args.pred, validate_ranges=False)
    metrics = [args.metric] if args.metric else truth.metrics()
    reports = {}
    for metric in metrics:
        reports[metric] = _report_for(pred, truth, metric, args.order).to_dict()
    _write_json(args.out, reports)
    _log(f"evaluated {len(metrics)} metric(s) -> {args.out}")
    if args.csv:
        rows = []
        for metric in sorted(reports):
            rep = reports[metric]
            for stat in ("mse", "mse_std", "mae", "mae_std", "spearman", "spearman_std"):
                rows.append((metric, stat, rep[stat]))
        _write_csv(args.csv, ("metric", "stat", "value"), rows)
    if args.plots:
        from . import plots

        path = plots.plot_eval_report(reports, Path(args.plots) / "evaluation.png")
        _log(f"figure -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------- baseline


def cmd_baseline(args: argparse.Namespace) -> int:
    if args.method == "simfluence":
        _resolve(args, _FIT_DEFAULTS)
        if not args.runs or not args.val:
            raise UsageError("--method simfluence requires --runs and --val")
        runs_train = dynamics.load_runs(args.runs)
        runs_val = dynamics.load_runs(args.val)
        truth = dynamics.load_runs(args.eval)
        config = _sim_config(args, 0)
        params, report = baselines.simfluence_fit(runs_train, runs_val, config)
        _log(
            f"simfluence fit: {report.epochs_run} epochs "
            f"(best {report.best_epoch}, val mse {min(report.val_mse_per_epoch):.4g})"
        )
        if args.model_out:
            baselines.save_simfluence(params, args.model_out)
        pred = _predict_per_id(params, truth, args.threads)
        rep = _report_for(pred, truth, config.metric, 1)
        _write_json(args.out, {"method": "simfluence", config.metric: rep.to_dict()})
    else:
        _resolve(args, {"metric": "loss", "threads": 1})
        if args.metric != "loss":
            raise UsageError(f"--method {args.method} simulates loss trajectories only")
        if not args.dumps:
            raise UsageError(f"--method {args.method} requires --dumps")
        truth = dynamics.load_runs(args.eval)
        dump_dir = Path(args.dumps)

        def one(run: dynamics.Run) -> dynamics.Run:
            dump_path = dump_dir / f"{run.run_id}.jsonl"
            dump = baselines.load_dump(dump_path)
            if args.method == "graddot":
                dump = dump.final_only()
            trajectories = {}
            for tid in run.test_ids("loss"):
                y1 = float(run.trajectory(tid, "loss").values[0])
                trajectories[(tid, "loss")] = baselines.tracin_simulate(dump, run, tid, y1)
            return dynamics.Run(
                run_id=run.run_id,
                curriculum=run.curriculum,
                trajectories=trajectories,
                tags={**run.tags, "prediction": args.method},
            )

        pred = dynamics.RunSet(_map_ordered(one, list(truth), args.threads))
        rep = _report_for(pred, truth, "loss", 1)
        _write_json(args.out, {"method": args.method, "loss": rep.to_dict()})
    _log(f"baseline {args.method} report -> {args.out}")
    if args.pred_out:
        dynamics.save_runs(pred, args.pred_out)
    return EXIT_OK


# ---------------------------------------------------------- rank-mislabeled


def cmd_rank_mislabeled(args: argparse.Namespace) -> int:
    _resolve(args, {"threads": 1})
    if args.method == "featurized":
        if not args.model or not args.embeddings:
            raise UsageError("--method featurized requires --model and --embeddings")
        params = simulator.load_model(args.model)
        table = dynamics.load_embeddings(args.embeddings)
        if args.ids:
            ids = sorted(json.loads(Path(args.ids).read_text(encoding="utf-8")))
        elif args.runs:
            ids = sorted(dynamics.load_runs(args.runs).train_ids())
        else:
            raise UsageError("--method featurized requires --ids or --runs")
        scores = {ex: mislabel.self_influence_featurized(params, table, ex) for ex in ids}
    else:
        if not args.dump:
            raise UsageError("--method tracin requires --dump")
        dump = baselines.load_dump(args.dump)
        ids = sorted({a for (a, b) in dump.checkpoints[0].dots if a == b})
        if not ids:
            raise DataError(f"dump {args.dump} has no self pairs to score")
        scores = {ex: mislabel.self_influence_tracin(dump, ex) for ex in ids}

    if args.scores_out:
        ranked = sorted(scores, key=lambda ex: (-scores[ex], ex))
        _write_csv(args.scores_out, ("rank", "id", "score"),
                   [(i + 1, ex, scores[ex]) for i, ex in enumerate(ranked)])
    if not args.flipped:
        if not args.scores_out:
            raise UsageError("provide --flipped for a detection curve or --scores-out for a ranking")
        _log(f"no --flipped given; wrote ranking only -> {args.scores_out}")
        return EXIT_OK
    if not args.out:
        raise UsageError("--flipped given but no --out path for the detection curve")
    flipped = set(json.loads(Path(args.flipped).read_text(encoding="utf-8")))
    curve = mislabel.detection_curve(scores, flipped)
    _write_csv(args.out, ("fraction", "found", "expected_random"),
               [(pt.fraction, pt.found, pt.expected_random) for pt in curve])
    _log(f"detection curve ({args.method}) -> {args.out}")
    if args.plots:
        from . import plots

        path = plots.plot_detection_curves({args.method: curve}, Path(args.plots) / "detection.png")
        _log(f"figure -> {path}")
    return EXIT_OK


# ------------------------------------------------------------- reduce-check


def cmd_reduce_check(args: argparse.Namespace) -> int:
    defaults = dict(_FIT_DEFAULTS)
    defaults.update({"tolerance": 1e-6, "epochs": 40, "lr": 5e-3, "warmup": 20, "patience": 0})
    _resolve(args, defaults)
    runs_train = dynamics.load_runs(args.runs)
    runs_val = dynamics.load_runs(args.val)
    runs_eval = dynamics.load_runs(args.eval)
    config = simulator.SimulatorConfig(
        embed_dim=0,
        order=1,
        l2_lambda=args.l2_lambda,
        learning_rate=args.lr,
        warmup_steps=args.warmup,
        max_epochs=args.epochs,
        batch_size=args.batch_size,
        early_stop_patience=args.patience,
        seed=args.seed,
        metric=args.metric,
    )
    rep = reduction.reduction_check(runs_train, runs_val, runs_eval, config, args.tolerance)
    _write_json(args.out, rep.to_dict())
    _log(
        f"reduction check: max epoch-loss diff {rep.max_epoch_loss_diff:.3g}, "
        f"max rollout diff {rep.max_rollout_diff:.3g} -> {args.out}"
    )
    if not rep.passed:
        _log("reduction check FAILED")
        return EXIT_NUMERIC
    return EXIT_OK


# ------------------------------------------------------------------ ablate


def cmd_ablate(args: argparse.Namespace) -> int:
    defaults = dict(_FIT_DEFAULTS)
    defaults.update({"split": "25,2,5", "intervals": None, "orders": None})
    _resolve(args, defaults)
    if not args.intervals and not args.orders:
        raise UsageError("provide --intervals and/or --orders to sweep")
    table = dynamics.load_embeddings(args.embeddings)
    runs = dynamics.load_runs(args.runs)
    try:
        n_train, n_val, n_test = (int(x) for x in args.split.split(","))
    except ValueError:
        raise UsageError(f"--split must be three comma-separated counts, got {args.split!r}") from None
    base_train, base_val, base_eval = dynamics.split_runs(runs, n_train, n_val, n_test, args.seed)

    def fit_and_score(tr, va, ev, order: int) -> evalmetrics.EvalReport:
        sweep_args = argparse.Namespace(**vars(args))
        sweep_args.order = order
        config = _sim_config(sweep_args, table.dim)
        params, _ = simulator.fit(tr, va, table, config)
        pred = _predict_featurized(params, ev, table, args.threads)
        return _report_for(pred, ev, config.metric, order)

    rows = []
    header = ("sweep", "value", "mse", "mse_std", "mae", "mae_std",
              "spearman", "spearman_std", "n_pairs", "n_runs")

    def add_row(sweep: str, value: int, rep: evalmetrics.EvalReport) -> None:
        rows.append((sweep, value, rep.mse, rep.mse_std, rep.mae, rep.mae_std,
                     rep.spearman, rep.spearman_std, rep.n_pairs, rep.n_runs))

    if args.intervals:
        for k in (int(x) for x in args.intervals.split(",")):
            sub = lambda rs: dynamics.RunSet([dynamics.subsample_run(r, k) for r in rs])
            rep = fit_and_score(sub(base_train), sub(base_val), sub(base_eval), args.order)
            add_row("interval", k, rep)
            _log(f"interval {k}: mse {rep.mse:.4g}")
    if args.orders:
        for n in (int(x) for x in args.orders.split(",")):
            rep = fit_and_score(base_train, base_val, base_eval, n)
            add_row("order", n, rep)
            _log(f"order {n}: mse {rep.mse:.4g}")

    _write_csv(args.out, header, rows)
    _log(f"ablation table -> {args.out}")
    if args.plots:
        from . import plots

        dict_rows = [dict(zip(header, row)) for row in rows]
        path = plots.plot_ablation(dict_rows, Path(args.plots) / "ablation.png")
        _log(f"figure -> {path}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> _Parser:
    parser = _Parser(prog="fluence", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-synthetic", help="emit synthetic dynamics, embeddings, and dumps")
    p.add_argument("--kind", choices=("planted", "toy"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--runs", dest="runs_count", type=int, help="number of runs")
    p.add_argument("--pool", type=int, help="training pool size")
    p.add_argument("--per-run", dest="per_run", type=int, help="examples sampled per run")
    p.add_argument("--steps", type=int, help="steps per run")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--test-pool", dest="test_pool", type=int, help="tracked test examples")
    p.add_argument("--seed", type=int)
    p.add_argument("--metric", help="planted metric kind (default loss)")
    p.add_argument("--order", type=int, help="planted recurrence order")
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--proj-dim", dest="proj_dim", type=int)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--classes", type=int, help="toy: number of classes")
    p.add_argument("--features", type=int, help="toy: feature dimension")
    p.add_argument("--toy-lr", dest="toy_lr", type=float, help="toy: SGD learning rate")
    p.add_argument("--checkpoint-interval", dest="checkpoint_interval", type=int, help="toy: dump every k states")
    p.add_argument("--corrupt", type=float, help="toy: label corruption fraction")
    p.add_argument("--separation", type=float, help="toy: class separation")
    _add_config_flag(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit the featurized simulator")
    p.add_argument("--runs", required=True, help="training runs file/dir")
    p.add_argument("--val", required=True, help="validation runs file/dir")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--report-out", dest="report_out", help="fit report JSON")
    _add_fit_flags(p)
    _add_config_flag(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="roll out a fitted model along runs")
    p.add_argument("--model", required=True)
    p.add_argument("--runs", required=True, help="runs providing curricula and seed values")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True, help="prediction runs dir or .jsonl")
    p.add_argument("--threads", type=int)
    p.add_argument("--plots", help="directory for rendered figures")
    _add_config_flag(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--order", type=int, help="seeded steps excluded from the window (default 1)")
    p.add_argument("--metric", help="restrict to one metric (default: all)")
    p.add_argument("--csv", help="long-format CSV output")
    p.add_argument("--threads", type=int)
    p.add_argument("--plots", help="directory for rendered figures")
    _add_config_flag(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="run a baseline method end to end")
    p.add_argument("--method", choices=("simfluence", "tracin", "graddot"), required=True)
    p.add_argument("--eval", required=True, help="held-out truth runs")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--runs", help="simfluence: training runs")
    p.add_argument("--val", help="simfluence: validation runs")
    p.add_argument("--dumps", help="tracin/graddot: dir of <run_id>.jsonl dumps")
    p.add_argument("--model-out", dest="model_out", help="simfluence: save fitted factors")
    p.add_argument("--pred-out", dest="pred_out", help="save predicted runs")
    p.add_argument("--threads", type=int)
    _add_fit_flags(p)
    _add_config_flag(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("rank-mislabeled", help="rank examples by self-influence")
    p.add_argument("--method", choices=("featurized", "tracin"), required=True)
    p.add_argument("--out", help="detection curve CSV (needs --flipped)")
    p.add_argument("--model", help="featurized: model file")
    p.add_argument("--embeddings", help="featurized: embedding table")
    p.add_argument("--ids", help="featurized: JSON list of train ids to score")
    p.add_argument("--runs", help="featurized: derive train ids from these runs")
    p.add_argument("--dump", help="tracin: gradient dump with self pairs")
    p.add_argument("--flipped", help="JSON list of ground-truth flipped ids")
    p.add_argument("--scores-out", dest="scores_out", help="ranked scores CSV")
    p.add_argument("--threads", type=int)
    p.add_argument("--plots", help="directory for rendered figures")
    _add_config_flag(p)
    p.set_defaults(func=cmd_rank_mislabeled)

    p = sub.add_parser("reduce-check", help="verify the per-id equivalence construction")
    p.add_argument("--runs", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--tolerance", type=float, help="agreement tolerance (default 1e-6)")
    _add_fit_flags(p)
    _add_config_flag(p)
    p.set_defaults(func=cmd_reduce_check)

    p = sub.add_parser("ablate", help="sweep checkpoint intervals and/or recurrence orders")
    p.add_argument("--runs", required=True, help="all runs; split internally")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--split", help="train,val,test counts (default 25,2,5)")
    p.add_argument("--intervals", help="comma-separated checkpoint intervals")
    p.add_argument("--orders", help="comma-separated recurrence orders")
    p.add_argument("--threads", type=int)
    p.add_argument("--plots", help="directory for rendered figures")
    _add_fit_flags(p)
    _add_config_flag(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"fluence: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DataError, ValueError) as e:
        print(f"fluence: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as e:
        print(f"fluence: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"fluence: i/o error: {e}", file=sys.stderr)
        return EXIT_IO


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
