"""Command-line front end.

Subcommands: train, sweep, select-hparams, prune, eval, compare. Exit codes:
0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import ConfigurationError
from .config import SWEEP_DEFAULTS, ConfigError, ExperimentConfig, load_config
from .data import Splits
from .losses import PENALTIES
from .netgraph import FormatError, PairingError, SegmentedNetwork, load_network, save_network, validate_pairing
from .trainer import RunReport, achieved_sparsity, evaluate, fine_tune, magnitude_prune, train

log = logging.getLogger("litdistill")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
SUMMARY = "summary.txt"
MODEL = "model.litm"
TEACHER = "teacher.litm"


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(v: float) -> str:
    return repr(float(v))


# ------------------------------------------------------------------------------ run pieces

def _teacher(cfg: ExperimentConfig, data: Splits, out: Optional[str]) -> Optional[SegmentedNetwork]:
    """Load the configured teacher checkpoint, or train one from scratch (cached in ``out``)."""
    path = cfg.path("teacher.checkpoint")
    if path is not None:
        return load_network(path)
    cached = os.path.join(out, TEACHER) if out else None
    if cached and os.path.exists(cached):
        return load_network(cached)
    spec = cfg.network_spec("teacher")
    log.info("training teacher (%d layers) from scratch", spec.weighted_layer_count())
    net, _ = train("scratch", None, spec, data, cfg.teacher_train_config())
    if cached:
        save_network(net, cached)
    return net


def _check_static(cfg: ExperimentConfig, variant: str) -> None:
    """Configuration checks that must fail before any training starts."""
    student = cfg.network_spec("student")
    cfg.train_config(variant)
    path = cfg.path("teacher.checkpoint")
    if variant != "scratch":
        if path is not None:
            if not os.path.isfile(path):
                raise cfg.error("teacher.checkpoint", f"teacher checkpoint not found: {path}")
        else:
            cfg.network_spec("teacher")
    if variant in ("lit", "multi_ir_no_input") and path is None:
        try:
            validate_pairing(cfg.network_spec("teacher"), student)
        except PairingError as exc:
            raise cfg.error("student.channels", str(exc)) from None
    if cfg["dataset.kind"] == "binary":
        data_path = cfg.path("dataset.path")
        if data_path is None or not os.path.isfile(data_path):
            raise cfg.error("dataset.path", f"dataset file not found: {data_path}")


def _summary_line(variant: str, net: SegmentedNetwork, report: RunReport, extra: Dict[str, str] = None) -> str:
    fields = {"variant": variant, "depth": str(net.spec.weighted_layer_count()),
              "params": str(net.parameter_count()), "metric": report.metric,
              "test": _num(report.final_test), "val": _num(report.final_val)}
    fields.update(extra or {})
    return " ".join(f"{k}={v}" for k, v in fields.items())


def run_train(cfg: ExperimentConfig, out: str, data: Optional[Splits] = None,
              teacher: Optional[SegmentedNetwork] = None) -> Tuple[SegmentedNetwork, RunReport]:
    variant = cfg["train.variant"]
    _check_static(cfg, variant)
    os.makedirs(out, exist_ok=True)
    data = data or cfg.splits()
    if variant != "scratch" and teacher is None:
        teacher = _teacher(cfg, data, out)
    net, report = train(variant, teacher, cfg.network_spec("student"), data, cfg.train_config())
    report.to_csv(os.path.join(out, "metrics.csv"))
    save_network(net, os.path.join(out, MODEL))
    _write(os.path.join(out, "config.txt"), cfg.resolved_text())
    extra = {f"note_{k}": v.replace(" ", "+") for k, v in sorted(report.notes.items())}
    _write(os.path.join(out, SUMMARY), _summary_line(variant, net, report, extra) + "\n")
    log.info("%s finished in %.1fs", variant, report.wall_seconds)
    return net, report


# ------------------------------------------------------------------------------ sweep

def _sweep_values(cfg: ExperimentConfig) -> Tuple[str, List[str]]:
    param = cfg["sweep.param"]
    if param is None:
        raise cfg.error("sweep.param", "sweep needs sweep.param")
    raw = cfg["sweep.values"] or SWEEP_DEFAULTS[param]
    values = []
    for v in raw:
        if param == "penalty":
            if v not in PENALTIES:
                raise cfg.error("sweep.values", f"penalty must be one of {PENALTIES}, got {v!r}")
            values.append(v)
            continue
        try:
            x = float(v)
        except ValueError:
            raise cfg.error("sweep.values", f"not a number: {v!r}") from None
        ok = {"tau": x > 0, "alpha": 0 <= x <= 1, "beta": 0 <= x <= 1, "sparsity": 0 <= x < 1}[param]
        if not ok:
            raise cfg.error("sweep.values", f"{param} value {v} out of range")
        values.append(v)
    return param, values


def _point_config(cfg: ExperimentConfig, param: str, value: str, seed: int) -> ExperimentConfig:
    changes = {"train.seed": seed}
    if param == "penalty":
        changes["train.penalty"] = value
    elif param != "sparsity":
        changes[f"train.{param}"] = float(value)
    return cfg.override(changes)


def _sweep_point(args) -> Tuple[str, int, float, float]:
    cfg, param, value, seed, out, teacher_path = args
    teacher = load_network(teacher_path) if teacher_path else None
    point = _point_config(cfg, param, value, seed)
    run_dir = os.path.join(out, "runs", f"{param}={value}_seed={seed}")
    data = point.splits()
    if param == "sparsity":
        net, report = run_train(point, run_dir, data, teacher)
        spec = point.override({"prune.sparsity": float(value)}).prune_spec()
        pruned, report = _prune_and_tune(net, spec, point, data)
        save_network(pruned, os.path.join(run_dir, "pruned.litm"))
        report.to_csv(os.path.join(run_dir, "prune_metrics.csv"))
        val = evaluate(pruned, data.val)
        return value, seed, val, report.final_test
    _, report = run_train(point, run_dir, data, teacher)
    return value, seed, report.final_val, report.final_test


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _shared_teacher(cfg: ExperimentConfig, out: str, variants: Sequence[str]) -> Optional[str]:
    """Path of a teacher checkpoint usable by every run, training it once if needed."""
    if all(v == "scratch" for v in variants):
        return None
    path = cfg.path("teacher.checkpoint")
    if path is not None:
        return path
    cached = os.path.join(out, TEACHER)
    if not os.path.exists(cached):
        os.makedirs(out, exist_ok=True)
        _teacher(cfg, cfg.splits(), out)
    return cached


def run_sweep(cfg: ExperimentConfig, out: str, jobs: int = 1) -> List[Tuple]:
    param, values = _sweep_values(cfg)
    seeds = list(cfg["sweep.seeds"])
    for v in values:
        _check_static(_point_config(cfg, param, v, seeds[0] if seeds else 0), cfg["train.variant"])
    teacher_path = _shared_teacher(cfg, out, [cfg["train.variant"]])
    items = [(cfg, param, v, s, out, teacher_path) for v in values for s in seeds]
    rows = _map(_sweep_point, items, jobs)
    key = (lambda r: (r[0], r[1])) if param == "penalty" else (lambda r: (float(r[0]), r[1]))
    rows.sort(key=key)
    _write(os.path.join(out, "sweep.csv"),
           _csv(("value", "seed", "val", "test"), [(v, s, _num(a), _num(b)) for v, s, a, b in rows]))
    return rows


# ------------------------------------------------------------------------------ hyperparameter selection

def _select_point(args):
    cfg, stage, tau, alpha, beta, out, teacher_path = args
    teacher = load_network(teacher_path)
    changes = {"train.tau": tau, "train.alpha": alpha, "train.beta": beta}
    if stage == "tau":
        changes["train.variant"] = "kd"
        if cfg["select.tau_student_blocks"] is not None:
            changes["student.blocks"] = cfg["select.tau_student_blocks"]
    elif stage == "alpha":
        changes["train.variant"] = "kd"
    else:
        changes["train.variant"] = "lit"
    point = cfg.override(changes)
    run_dir = os.path.join(out, "runs", f"{stage}_tau={tau}_alpha={alpha}_beta={beta}")
    _, report = run_train(point, run_dir, None, teacher)
    return report.final_val


def _best(grid: Sequence[float], scores: Sequence[float]) -> float:
    # highest validation score; ties go to the smaller value
    return min(zip(grid, scores), key=lambda p: (-p[1], p[0]))[0]


def run_select(cfg: ExperimentConfig, out: str, jobs: int = 1) -> Tuple[float, float, float]:
    taus, alphas, betas = (sorted(cfg[f"select.{k}"]) for k in ("tau", "alpha", "beta"))
    for name, grid in (("select.tau", taus), ("select.alpha", alphas), ("select.beta", betas)):
        if not grid:
            raise cfg.error(name, "grid is empty")
    if any(t <= 0 for t in taus):
        raise cfg.error("select.tau", "tau values must be positive")
    if any(not 0 <= v <= 1 for v in list(alphas) + list(betas) + [cfg["select.tau_alpha"]]):
        raise cfg.error("select.alpha", "alpha and beta values must lie in [0, 1]")
    for variant in ("kd", "lit"):
        _check_static(cfg, variant)
    teacher_path = _shared_teacher(cfg, out, ["lit"])
    trace = []
    beta0 = cfg.distill().beta
    scores = _map(_select_point, [(cfg, "tau", t, cfg["select.tau_alpha"], beta0, out, teacher_path)
                                  for t in taus], jobs)
    tau = _best(taus, scores)
    trace += [("tau", t, cfg["select.tau_alpha"], beta0, s) for t, s in zip(taus, scores)]
    scores = _map(_select_point, [(cfg, "alpha", tau, a, beta0, out, teacher_path) for a in alphas], jobs)
    alpha = _best(alphas, scores)
    trace += [("alpha", tau, a, beta0, s) for a, s in zip(alphas, scores)]
    scores = _map(_select_point, [(cfg, "beta", tau, alpha, b, out, teacher_path) for b in betas], jobs)
    beta = _best(betas, scores)
    trace += [("beta", tau, alpha, b, s) for b, s in zip(betas, scores)]
    _write(os.path.join(out, "trace.csv"),
           _csv(("stage", "tau", "alpha", "beta", "val"),
                [(st, _num(t), _num(a), _num(b), _num(s)) for st, t, a, b, s in trace]))
    _write(os.path.join(out, "selected.txt"), f"tau={_num(tau)} alpha={_num(alpha)} beta={_num(beta)}\n")
    return tau, alpha, beta


# ------------------------------------------------------------------------------ prune / eval / compare

def _prune_and_tune(net, spec, cfg: ExperimentConfig, data: Splits):
    net = net.clone()
    magnitude_prune(net, spec)
    report = fine_tune(net, data, cfg.train_config("scratch"), spec.fine_tune_epochs)
    report.final_val = evaluate(net, data.val)
    return net, report


def run_prune(cfg: ExperimentConfig, out: str) -> Tuple[SegmentedNetwork, float]:
    path = cfg.path("prune.checkpoint")
    if path is None:
        raise cfg.error("prune.checkpoint", "prune needs prune.checkpoint")
    if not os.path.isfile(path):
        raise cfg.error("prune.checkpoint", f"checkpoint not found: {path}")
    spec = cfg.prune_spec()
    cfg.train_config("scratch")
    net = load_network(path)
    data = cfg.splits()
    os.makedirs(out, exist_ok=True)
    pruned, report = _prune_and_tune(net, spec, cfg, data)
    achieved = achieved_sparsity(pruned)
    save_network(pruned, os.path.join(out, MODEL))
    report.to_csv(os.path.join(out, "metrics.csv"))
    _write(os.path.join(out, "config.txt"), cfg.resolved_text())
    _write(os.path.join(out, SUMMARY), _summary_line(
        "pruned", pruned, report, {"sparsity": _num(achieved), "scope": spec.scope}) + "\n")
    return pruned, achieved


def run_eval(cfg: ExperimentConfig, out: Optional[str]) -> float:
    path = cfg.path("eval.checkpoint")
    if path is None:
        raise cfg.error("eval.checkpoint", "eval needs eval.checkpoint")
    if not os.path.isfile(path):
        raise cfg.error("eval.checkpoint", f"checkpoint not found: {path}")
    net = load_network(path)
    data = cfg.splits()
    score = evaluate(net, data.test)
    metric = "accuracy" if net.spec.class_count is not None else "pixel_error"
    if out:
        os.makedirs(out, exist_ok=True)
        _write(os.path.join(out, "eval.txt"), f"checkpoint={path} metric={metric} test={_num(score)}\n")
    return score


def _read_summary(directory: str) -> Dict[str, str]:
    path = os.path.join(directory, SUMMARY)
    if not os.path.isfile(path):
        raise ConfigError(f"no {SUMMARY} in {directory}")
    with open(path, encoding="utf-8") as fh:
        return dict(item.split("=", 1) for item in fh.read().split())


def run_compare(dirs: Sequence[str], out: str) -> List[Tuple]:
    rows = []
    for d in dirs:
        s = _read_summary(d)
        model = os.path.join(d, MODEL)
        if os.path.isfile(model):
            net = load_network(model)
            depth, params = net.spec.weighted_layer_count(), net.parameter_count()
        else:
            depth, params = int(s["depth"]), int(s["params"])
        rows.append((s["variant"], depth, params, s["test"]))
    os.makedirs(out, exist_ok=True)
    _write(os.path.join(out, "table.csv"), _csv(("variant", "depth", "params", "accuracy"), rows))
    return rows


# ------------------------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="litdistill", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, jobs=False):
        if config:
            p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--seed", type=int, metavar="N", help="override train.seed")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, metavar="N")

    common(sub.add_parser("train", help="train one student"))
    common(sub.add_parser("sweep", help="sweep one distillation parameter over seeds"), jobs=True)
    common(sub.add_parser("select-hparams", help="choose tau, then alpha, then beta"), jobs=True)
    common(sub.add_parser("prune", help="magnitude-prune a checkpoint and fine-tune"))
    common(sub.add_parser("eval", help="evaluate a checkpoint on the test split"))
    cmp_ = sub.add_parser("compare", help="merge run summaries into table.csv")
    cmp_.add_argument("dirs", nargs="+", metavar="DIR")
    cmp_.add_argument("--out", required=True, metavar="DIR")
    return parser


def _out_dir(args, cfg: ExperimentConfig) -> str:
    out = args.out or cfg.path("output.dir")
    if out is None:
        raise ConfigError("no output directory: pass --out or set output.dir")
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "compare":
            rows = run_compare(args.dirs, args.out)
            print(f"wrote {len(rows)} rows to {os.path.join(args.out, 'table.csv')}")
            return EXIT_OK
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.override({"train.seed": args.seed})
            if args.command == "sweep":
                cfg = cfg.override({"sweep.seeds": (args.seed,)})
        if getattr(args, "jobs", 1) < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.command == "train":
            out = _out_dir(args, cfg)
            net, report = run_train(cfg, out)
            print(_summary_line(cfg["train.variant"], net, report))
        elif args.command == "sweep":
            rows = run_sweep(cfg, _out_dir(args, cfg), args.jobs)
            print(f"wrote {len(rows)} rows to {os.path.join(_out_dir(args, cfg), 'sweep.csv')}")
        elif args.command == "select-hparams":
            tau, alpha, beta = run_select(cfg, _out_dir(args, cfg), args.jobs)
            print(f"tau={tau} alpha={alpha} beta={beta}")
        elif args.command == "prune":
            _, achieved = run_prune(cfg, _out_dir(args, cfg))
            print(f"sparsity={achieved}")
        elif args.command == "eval":
            out = args.out or cfg.path("output.dir")
            print(f"test={run_eval(cfg, out)}")
    except (ConfigurationError, FormatError, PairingError) as exc:
        print(f"litdistill: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"litdistill: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
