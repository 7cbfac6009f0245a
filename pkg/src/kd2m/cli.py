"""Command-line front end: ``kd2m <command> ...``.

Exit codes: 0 success, 1 a checked bound failed, 2 usage/config/input
errors, 3 training divergence.
"""

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data, plotting, theory
from .config import distill_config, load_run_config
from .distill import METHODS, DistillConfig, ModelSpec, distill, evaluate, train_teacher
from .errors import ConfigError, DivergenceError, KD2MError
from .metrics import FEATURE_METRICS
from .nn import MlpModel, MlpSpec, load_model, model_from_dict, model_to_dict, save_model

EXIT_OK, EXIT_BOUND, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _positive_int(text):
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _write_text(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


def _check_writable(path):
    parent = Path(path).resolve().parent
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise UsageError(f"cannot write {path}: directory does not exist or is not writable")


def _save_log(log, path, figure=None, label="run"):
    if path:
        _check_writable(path)
        log.save(path)
    if figure:
        _check_writable(figure)
        plotting.plot_training_curves({label: log}, figure)


def cmd_gen_data(args):
    _check_writable(args.out)
    kwargs = {}
    if args.dataset == "blobs":
        kwargs = {"n_classes": args.n_classes, "dim": args.dim}
    elif args.dataset == "spirals":
        kwargs = {"turns": args.turns}
    try:
        ds = data.make_dataset(args.dataset, args.n, args.seed, args.noise, **kwargs)
    except KD2MError as exc:
        raise UsageError(str(exc)) from None
    data.save_csv(ds, args.out)
    counts = ", ".join(f"{c}: {k}" for c, k in enumerate(ds.class_counts()))
    print(f"wrote {len(ds)} rows, {ds.n_classes} classes ({counts}) to {args.out}")
    return EXIT_OK


def cmd_train_teacher(args):
    cfg = load_run_config(args.config)
    _full, train, test = cfg.load_data()
    spec = cfg.model_spec("teacher", train.dim, train.n_classes)
    tcfg = cfg.teacher_training
    if args.seed is not None:
        tcfg = tcfg.replace(seed=args.seed)
    _check_writable(args.out)
    model, log = train_teacher(spec, train, tcfg, test)
    model.training_meta["split"] = {"test_fraction": cfg.test_fraction, "seed": cfg.split_seed}
    save_model(model, args.out)
    _save_log(log, args.log, args.figure, "teacher")
    acc = evaluate(model, test)
    print(f"teacher: {len(log)} epochs, test accuracy {100 * acc:.2f}%")
    return EXIT_OK


def _student_config(cfg, args) -> DistillConfig:
    tcfg = cfg.training
    changes = {}
    if args.metric is not None:
        changes["metric"] = args.metric
    if args.lam is not None:
        changes["lam"] = args.lam
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes.get("metric") == "none" and "lam" not in changes:
        changes["lam"] = 0.0
    return tcfg.replace(**changes)


def _load_model(path) -> MlpModel:
    try:
        return load_model(path)
    except FileNotFoundError:
        raise UsageError(f"model file not found: {path}") from None


def cmd_distill(args):
    cfg = load_run_config(args.config)
    teacher = _load_model(args.teacher)
    _full, train, test = cfg.load_data()
    spec = cfg.model_spec("student", train.dim, train.n_classes)
    if spec.latent_dim != teacher.latent_dim:
        raise ConfigError(f"latent dimension mismatch: student {spec.latent_dim} vs teacher {teacher.latent_dim}")
    scfg = _student_config(cfg, args)
    _check_writable(args.out)
    student, log = distill(spec, teacher, train, scfg, test)
    student.training_meta["split"] = {"test_fraction": cfg.test_fraction, "seed": cfg.split_seed}
    save_model(student, args.out)
    _save_log(log, args.log, args.figure, f"{scfg.metric} (lambda={scfg.lam:g})")
    acc = evaluate(student, test)
    if log.records:
        last = log.records[-1]
        print(f"metric={scfg.metric} lambda={scfg.lam:g}: final L_c {last.loss_c:.6g}, "
              f"L_d {last.loss_d:.6g}, test accuracy {100 * acc:.2f}%, fallback batches {log.n_fallback}")
    else:
        print(f"no epochs run; test accuracy {100 * acc:.2f}%")
    return EXIT_OK


def _compatible(a: MlpModel, b: MlpModel, ds: data.Dataset | None = None):
    if a.latent_dim != b.latent_dim:
        raise ConfigError(f"latent dimension mismatch: {a.latent_dim} vs {b.latent_dim}")
    if a.encoder.spec.n_in != b.encoder.spec.n_in:
        raise ConfigError("models disagree on input dimension")
    if ds is not None and ds.dim != a.encoder.spec.n_in:
        raise ConfigError(f"data has {ds.dim} features, models expect {a.encoder.spec.n_in}")


def cmd_bound_check(args):
    teacher, student = _load_model(args.teacher), _load_model(args.student)
    ds = data.load_csv(args.data)
    _compatible(teacher, student, ds)
    _check_writable(args.out)
    batch = min(args.batch, len(ds), theory.MAX_EXACT_POINTS)
    rows = []
    for t in range(args.trials):
        if batch == len(ds):
            X = ds.X
        else:
            X = ds.X[np.sort(data.make_rng(args.seed, "probe", t).choice(len(ds), batch, replace=False))]
        r = theory.check_theorem1(student, teacher, X)
        rows.append({"trial": t, **r.to_dict()})
    gap = theory.risk_gap_report(teacher.head, student, teacher, ds, seed=args.seed)
    holds = all(r["holds_theorem1"] for r in rows)
    report = {
        "holds_theorem1_all": holds,
        "trials": len(rows),
        "batch": batch,
        "max_w2": max(r["w2"] for r in rows),
        "min_slack": min(r["slack"] for r in rows),
        "w2": rows[0]["w2"] if rows else None,
        "l2_encoders": rows[0]["l2_encoders"] if rows else None,
        "risk_gap": gap.to_dict(),
        "per_trial": rows,
    }
    _write_text(args.out, json.dumps(report, indent=1) + "\n")
    table = Path(args.out).with_suffix(".csv")
    with open(table, "w", newline="") as fh:
        fields = ["trial", "n", "w2", "l2_encoders", "diag_coupling_cost", "slack", "holds_theorem1"]
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(f"W2 <= encoder L2 bound {'holds' if holds else 'VIOLATED'} on {len(rows)} trial(s); "
          f"max W2 {report['max_w2']:.6g}, min slack {report['min_slack']:.3g}; "
          f"risk gap {gap.risk_gap:.4g} vs W2 {gap.w2:.4g}")
    return EXIT_OK if holds else EXIT_BOUND


def cmd_plot_features(args):
    teacher, student = _load_model(args.teacher), _load_model(args.student)
    ds = data.load_csv(args.data)
    _compatible(teacher, student, ds)
    _check_writable(args.out)
    ZT, ZS = teacher.features(ds.X), student.features(ds.X)
    idx = theory.probe_indices(len(ds))
    w2 = theory.probe_w2(student, teacher, ds.X[idx])
    out = plotting.plot_features(ZT, ZS, args.out, title=args.title, w2=w2)
    print(f"wrote {args.out} ({len(ds)} points, axes: {', '.join(l for l in out['labels'] if l)}); "
          f"W2(student, teacher) = {w2:.6g}")
    return EXIT_OK


def _bench_cell(job):
    method, seed, lam, spec_dict, teacher_dict, cfg_dict, train, test = job
    teacher = model_from_dict(teacher_dict)
    spec = ModelSpec(MlpSpec(**spec_dict["encoder"]), MlpSpec(**spec_dict["head"]))
    cfg = distill_config(cfg_dict).replace(seed=seed)
    t0 = time.perf_counter()
    if method == "teacher":
        return {"metric": "teacher", "seed": seed, "lambda": 0.0, "accuracy": evaluate(teacher, test),
                "final_loss_d": math.nan, "wall_time": 0.0}
    if method == "baseline":
        cfg = cfg.replace(metric="none", lam=0.0)
    else:
        cfg = cfg.replace(metric=method, lam=lam)
    try:
        student, log = distill(spec, teacher, train, cfg, test)
        acc = evaluate(student, test)
        loss_d = log.records[-1].loss_d if log.records else math.nan
    except DivergenceError:
        acc, loss_d = math.nan, math.inf
    return {"metric": method, "seed": seed, "lambda": cfg.lam, "accuracy": acc,
            "final_loss_d": loss_d, "wall_time": time.perf_counter() - t0}


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("KD2M_THREADS", os.cpu_count() or 1)))
    except ValueError:
        return 1


def cmd_bench_metrics(args):
    teacher, student = _load_model(args.teacher), _load_model(args.student)
    ds = data.load_csv(args.data)
    _compatible(teacher, student, ds)
    _check_writable(args.out)
    meta_cfg = dict(student.training_meta.get("config", {}))
    if args.config:
        meta_cfg = {**meta_cfg, **json.loads(Path(args.config).read_text())}
    split = student.training_meta.get("split", {})
    test_fraction = args.test_fraction or split.get("test_fraction", 0.3)
    train, test = data.split(ds, test_fraction, split.get("seed", 0) if args.split_seed is None else args.split_seed)
    methods = list(args.metrics.split(",")) if args.metrics else [*FEATURE_METRICS, "classical_kd"]
    for m in methods:
        if m not in METHODS[1:]:
            raise UsageError(f"unknown metric {m!r}; valid names: {', '.join(METHODS[1:])}")
    seeds = [int(s) for s in args.seeds.split(",")]
    spec = {"encoder": student.encoder.spec.to_dict(), "head": student.head.spec.to_dict()}
    tdict = model_to_dict(teacher)
    order = ["teacher", "baseline", *methods]
    jobs = [(m, s, args.lam, spec, tdict, meta_cfg, train, test) for m in order for s in seeds]
    n_workers = min(_threads(), len(jobs))
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            rows = list(pool.map(_bench_cell, jobs))
    else:
        rows = [_bench_cell(j) for j in jobs]
    rows.sort(key=lambda r: (order.index(r["metric"]), r["seed"]))
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["metric", "seed", "lambda", "accuracy", "final_loss_d", "wall_time"],
                                lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in r.items()})
    if args.figure:
        plotting.plot_bench([r for r in rows if not math.isnan(r["accuracy"])], args.figure)
    print(f"{'method':<14}{'mean acc %':>11}")
    for m in order:
        acc = [r["accuracy"] for r in rows if r["metric"] == m]
        print(f"{m:<14}{100 * float(np.mean(acc)):>11.2f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kd2m", description="Knowledge distillation by feature distribution matching.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset as CSV")
    g.add_argument("--dataset", choices=["blobs", "moons", "spirals"], required=True)
    g.add_argument("--n", type=_positive_int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=None, help="noise std (blobs: cluster spread)")
    g.add_argument("--n-classes", type=_positive_int, default=3, help="blobs only")
    g.add_argument("--dim", type=_positive_int, default=2, help="blobs only")
    g.add_argument("--turns", type=float, default=1.5, help="spirals only")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train-teacher", help="supervised teacher training from a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="model JSON path")
    t.add_argument("--log", help="training log path (.csv or .json)")
    t.add_argument("--figure", help="loss/accuracy curves (.svg/.png)")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train_teacher)

    d = sub.add_parser("distill", help="distill a student from a trained teacher")
    d.add_argument("--config", required=True)
    d.add_argument("--teacher", required=True)
    d.add_argument("--metric", choices=METHODS)
    d.add_argument("--lambda", dest="lam", type=float)
    d.add_argument("--seed", type=int)
    d.add_argument("--out", required=True)
    d.add_argument("--log")
    d.add_argument("--figure")
    d.set_defaults(func=cmd_distill)

    b = sub.add_parser("bound-check", help="verify W2 <= encoder L2 distance on data")
    b.add_argument("--teacher", required=True)
    b.add_argument("--student", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--trials", type=_positive_int, default=1)
    b.add_argument("--batch", type=_positive_int, default=64, help="points per trial (max 500)")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True, help="JSON report; a per-trial CSV is written next to it")
    b.set_defaults(func=cmd_bound_check)

    f = sub.add_parser("plot-features", help="teacher (red) vs student (blue) feature scatter")
    f.add_argument("--teacher", required=True)
    f.add_argument("--student", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--title")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_plot_features)

    m = sub.add_parser("bench-metrics", help="distill with every metric over several seeds")
    m.add_argument("--data", required=True)
    m.add_argument("--teacher", required=True)
    m.add_argument("--student", required=True, help="student model whose architecture and config are reused")
    m.add_argument("--config", help="JSON object of training overrides")
    m.add_argument("--metrics", help=f"comma list (default: all of {', '.join(METHODS[1:])})")
    m.add_argument("--seeds", default="0,1,2,3,4")
    m.add_argument("--lambda", dest="lam", type=float, default=1.0)
    m.add_argument("--test-fraction", type=float)
    m.add_argument("--split-seed", type=int)
    m.add_argument("--figure")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_bench_metrics)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"kd2m: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, KD2MError, OSError, json.JSONDecodeError) as exc:
        print(f"kd2m {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
