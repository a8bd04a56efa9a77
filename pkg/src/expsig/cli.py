"""``expsig`` command-line driver.

Verbs: ``gen``, ``train``, ``eval``, ``variance``, ``benchmark``. Every CSV
starts with a ``#`` line holding the full invocation, then a header row.
Exit codes: 0 success, 2 usage or config error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import shlex
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .baselines import PREPROCESSORS
from .datasets import TASKS, TaskParams, load_tsv, make_task, write_tsv
from .model import (
    ModelParams,
    build_model,
    evaluate,
    grid_search_cv,
    output_variance_analysis,
    predict_dataset,
    train_sgd,
    weighted_accuracy,
    with_hyper,
)
from .persist import ConfigError, RunConfig, load_config, load_model, save_model

log = logging.getLogger("expsig")

MODEL_KINDS = ("expsig",) + PREPROCESSORS
BENCHMARK_COLUMNS = ("NoAug", "FFT", "CS", "GP", "Model")
_BENCHMARK_KINDS = ("noaug", "fft", "cs", "gp", "expsig")


class UsageError(Exception):
    """Invalid combination of arguments (exit code 2)."""


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def write_csv(path: Path, header, rows, invocation: str) -> None:
    buf = io.StringIO()
    buf.write(f"# {invocation}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _task_params(args) -> TaskParams:
    return TaskParams(N=args.length, T=args.horizon)


def _check_M(cfg: RunConfig, model) -> None:
    if cfg.M is None or not isinstance(model, ModelParams):
        return
    actual = model.augmenter.n_out // model.dim
    if actual != cfg.M:
        raise ConfigError(f"config M = {cfg.M} but strategy {cfg.hyper.strategy!r} "
                          f"yields {actual} new time instants for this data")


# ----------------------------------------------------------------- gen
def cmd_gen(args, invocation: str) -> int:
    out = _out_dir(args)
    params = _task_params(args)
    train, test = make_task(args.task, args.seed, args.n_train, args.n_test, params)
    stem = args.task.lower()
    write_tsv(train, out / f"{stem}_train.tsv")
    write_tsv(test, out / f"{stem}_test.tsv")
    meta = {"invocation": invocation, "task": stem, "seed": args.seed,
            "n_train_per_class": args.n_train, "n_test_per_class": args.n_test,
            "classes": train.class_count, "dim": train.dim, "params": asdict(params)}
    (out / f"{stem}_meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    print(f"wrote {stem}_train.tsv ({len(train)}), {stem}_test.tsv ({len(test)}) to {out}")
    return 0


# --------------------------------------------------------------- train
def _history_rows(history):
    return [[h["epoch"], h["loss"], h["train_wacc"], h.get("val_wacc", "")] for h in history]


def _search(kind, cfg: RunConfig, data, invocation, out: Path | None):
    """Grid search over ``cfg.grid`` with ``cfg.folds`` shared folds; returns the updated config."""
    if not cfg.grid or cfg.folds < 2:
        return cfg
    best, table = grid_search_cv(cfg.grid, data, cfg.folds, cfg.train, cfg.hyper, kind, cfg.hyper.seed)
    if out is not None:
        keys = list(cfg.grid)
        write_csv(out / f"search_{kind}.csv", keys + ["val_wacc"],
                  [[row[k] for k in keys] + [row["val_wacc"]] for row in table], invocation)
    hyper_keys = set(asdict(cfg.hyper))
    hyper = replace(cfg.hyper, **{k: v for k, v in best.items() if k in hyper_keys})
    train = replace(cfg.train, **{k: v for k, v in best.items() if k not in hyper_keys})
    return RunConfig(hyper, train, cfg.folds, cfg.M, cfg.grid)


def cmd_train(args, invocation: str) -> int:
    cfg = _run_config(args)
    out = _out_dir(args)
    data = load_tsv(args.train, name="train")
    val = load_tsv(args.val, name="val") if args.val else None
    cfg = _search(args.kind, cfg, data, invocation, out)
    model = build_model(args.kind, cfg.hyper, data.items[0][0], data.class_count)
    _check_M(cfg, model)
    model, history = train_sgd(model, data, cfg.train, val)
    save_model(model, out / "model.json")
    write_csv(out / "history.csv", ["epoch", "loss", "train_wacc", "val_wacc"],
              _history_rows(history), invocation)
    last = history[-1] if history else {}
    print(f"trained {args.kind} for {cfg.train.epochs} epochs; final {last}")
    return 0


# ---------------------------------------------------------------- eval
def _load_pair(args):
    model = load_model(args.model)
    test = load_tsv(args.test, name="test")
    if test.dim != model.dim:
        raise ValueError(f"model expects {model.dim} channels, test set has {test.dim}")
    if test.class_count > model.n_classes:
        raise ValueError(f"test set has {test.class_count} classes, model only {model.n_classes}")
    return model, test


def cmd_eval(args, invocation: str) -> int:
    model, test = _load_pair(args)
    out = _out_dir(args)
    seed = 0 if args.seed is None else args.seed
    rows, prob_rows = [], []
    for r in range(args.runs):
        probs = predict_dataset(model, test, seed, r)
        preds = probs.argmax(axis=1)
        acc = float(np.mean(preds == test.labels))
        wacc = weighted_accuracy(preds, test.labels, test.class_count)
        rows.append([r, seed, acc, wacc])
        if args.dump_probs:
            prob_rows += [[r, i, int(lbl), *p] for i, (lbl, p) in enumerate(zip(test.labels, probs))]
    rows.append(["mean", seed, float(np.mean([r[2] for r in rows])), float(np.mean([r[3] for r in rows]))])
    write_csv(out / "metrics.csv", ["run", "seed", "acc", "wacc"], rows, invocation)
    if args.dump_probs:
        header = ["run", "index", "label"] + [f"p{k}" for k in range(model.n_classes)]
        write_csv(out / "probs.csv", header, prob_rows, invocation)
    print(f"acc {rows[-1][2]:.4f}  wacc {rows[-1][3]:.4f}  ({args.runs} runs)")
    return 0


# ------------------------------------------------------------ variance
def _parse_K_list(text: str) -> list[int]:
    try:
        Ks = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--K expects comma-separated integers, got {text!r}") from None
    if not Ks or min(Ks) < 1:
        raise UsageError("--K values must be positive")
    return Ks


def cmd_variance(args, invocation: str) -> int:
    model, test = _load_pair(args)
    out = _out_dir(args)
    seed = 0 if args.seed is None else args.seed
    if args.K is None:
        variants = [("variance", model)]
    else:
        if not isinstance(model, ModelParams):
            raise UsageError("--K applies only to expsig models")
        variants = [(f"variance_K{K}", with_hyper(model, K=K)) for K in _parse_K_list(args.K)]
    for stem, m in variants:
        rep = output_variance_analysis(m, test, args.runs, seed, args.bins)
        write_csv(out / f"{stem}.csv", ["index", "label", "cov_norm"],
                  [[i, int(lbl), v] for i, (lbl, v) in enumerate(zip(test.labels, rep.norms))], invocation)
        edges = rep.hist_edges
        write_csv(out / f"{stem}_hist.csv", ["bin_lo", "bin_hi", "count"],
                  [[edges[b], edges[b + 1], int(c)] for b, c in enumerate(rep.hist_counts)], invocation)
        print(f"{stem}: median covariance 2-norm {rep.median:.6g}")
    return 0


# ----------------------------------------------------------- benchmark
def _benchmark_sets(args):
    if args.train or args.test:
        if not (args.train and args.test):
            raise UsageError("--train and --test must be given together")
        return [(Path(args.train).stem, load_tsv(args.train, name="train"), load_tsv(args.test, name="test"))]
    if not args.task:
        raise UsageError("benchmark needs --task or --train/--test")
    seed = 0 if args.seed is None else args.seed
    names = TASKS if args.task == "all" else [t.strip().lower() for t in args.task.split(",")]
    sets = []
    for name in names:
        if name not in TASKS:
            raise UsageError(f"unknown task {name!r}; choose from {TASKS} or 'all'")
        tr, te = make_task(name, seed, args.n_train, args.n_test, _task_params(args))
        sets.append((name, tr, te))
    return sets


def cmd_benchmark(args, invocation: str) -> int:
    cfg = _run_config(args)
    out = _out_dir(args)
    seed = cfg.hyper.seed
    rows = []
    for name, train, test in _benchmark_sets(args):
        row = [name]
        for kind in _BENCHMARK_KINDS:
            kcfg = _search(kind, cfg, train, invocation, None)
            model = build_model(kind, kcfg.hyper, train.items[0][0], train.class_count)
            model, _ = train_sgd(model, train, kcfg.train)
            runs = args.runs if kind == "expsig" else 1
            row.append(evaluate(model, test, seed, runs)["wacc"])
            log.info("%s %s wacc %.4f", name, kind, row[-1])
        rows.append(row)
        print(name, " ".join(f"{c}={v:.4f}" for c, v in zip(BENCHMARK_COLUMNS, row[1:])))
    write_csv(out / "benchmark.csv", ["dataset", *BENCHMARK_COLUMNS], rows, invocation)
    return 0


# ---------------------------------------------------------------- main
def _add_common(p: argparse.ArgumentParser, runs_default: int | None = None) -> None:
    p.add_argument("--config", help="key = value training config file")
    p.add_argument("--seed", type=int, default=None, help="run seed (overrides the config)")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    if runs_default is not None:
        p.add_argument("--runs", type=int, default=runs_default, help="stochastic evaluation passes")


def _add_task_shape(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-train", type=int, default=200, help="training series per class")
    p.add_argument("--n-test", type=int, default=200, help="test series per class")
    p.add_argument("--length", type=int, default=50, help="points per series")
    p.add_argument("--horizon", type=float, default=1.0, help="time horizon T")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="expsig", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen", help="write a synthetic train/test split as TSV")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    _add_task_shape(p)

    p = sub.add_parser("train", help="train a model on a TSV file")
    _add_common(p)
    p.add_argument("--train", required=True, help="training TSV")
    p.add_argument("--val", help="validation TSV (adds val_wacc to the history)")
    p.add_argument("--kind", default="expsig", choices=MODEL_KINDS)

    p = sub.add_parser("eval", help="accuracy and weighted accuracy over stochastic runs")
    _add_common(p, runs_default=50)
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--dump-probs", action="store_true", help="also write probs.csv")

    p = sub.add_parser("variance", help="per-series output covariance 2-norms")
    _add_common(p, runs_default=50)
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--K", help="comma-separated sample counts; one CSV per value")
    p.add_argument("--bins", type=int, default=20)

    p = sub.add_parser("benchmark", help="NoAug/FFT/CS/GP/Model comparison table")
    _add_common(p, runs_default=10)
    p.add_argument("--task", help="task name, comma list, or 'all'")
    p.add_argument("--train", help="training TSV (instead of --task)")
    p.add_argument("--test", help="test TSV (instead of --task)")
    _add_task_shape(p)
    return parser


_COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
             "variance": cmd_variance, "benchmark": cmd_benchmark}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    invocation = "expsig " + shlex.join(argv)
    if getattr(args, "runs", 1) < 1:
        print("expsig: error: --runs must be at least 1", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.verb](args, invocation)
    except (UsageError, ConfigError) as exc:
        print(f"expsig {args.verb}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, ArithmeticError, RuntimeError) as exc:
        print(f"expsig {args.verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
