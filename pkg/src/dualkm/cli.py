"""Command line interface: ``dualkm {train,predict,evaluate,inspect}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or model
file error, 3 numerical failure during training.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys
import time
import warnings

import numpy as np

from .config import LAMBDA_GRID, load_config
from .kernels import kernel_matvec, rff_map
from .data import DataFormatError, Dataset, load_dataset, train_test_split
from .metrics import METRICS, accuracy, evaluate, rmse
from .model import (
    ModelFormatError,
    OvrModel,
    load_model,
    ovr_predict,
    ovr_train,
    predict_label,
    predict_proba,
    predict_raw,
    prepare,
    read_model_header,
    save_model,
    train,
)
from .solver import DivergenceError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

LOG_COLUMNS = (
    "iteration",
    "wall_seconds",
    "dual_objective",
    "primal_objective",
    "duality_gap",
    "val_loss",
    "val_metric_name",
    "val_metric",
    "submodel",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return repr(float(x))


# -- argument parsing ----------------------------------------------------------

# flag -> RunConfig field
_CONFIG_FLAGS = {
    "loss": "loss",
    "lam": "lam",
    "delta": "delta",
    "epsilon_ins": "epsilon",
    "p": "p",
    "mode": "mode",
    "kernel": "kernel",
    "sigma": "sigma",
    "rff_dim": "n_components",
    "block_size": "block_size",
    "iters": "n_iter",
    "delta_max": "delta_max",
    "eta": "eta",
    "tr_tol": "tr_tol",
    "max_tr_iter": "max_tr_iter",
    "max_cg_iter": "max_cg_iter",
    "seed_partition": "seed_partition",
    "seed_rff": "seed_rff",
    "seed_split": "seed_split",
    "seed_median": "seed_median",
    "precision": "precision",
    "log_every": "log_every",
    "primal_eval": "primal_eval",
    "primal_subsample": "primal_subsample",
    "val_rows": "val_rows",
    "chunk": "chunk",
}


def _add_train(sub):
    p = sub.add_parser("train", help="fit a model and write a model file")
    p.add_argument("data", help="training data (.csv or libsvm)")
    p.add_argument("-o", "--model", required=True, help="output model file")
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--val", help="validation data for logging and the lambda grid")
    p.add_argument("--log", help="CSV convergence log")
    p.add_argument("--label-column", type=int, default=-1, help="label column for CSV input")
    p.add_argument("--loss")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--delta", type=float, help="Huber threshold")
    p.add_argument("--epsilon-ins", type=float, help="SVR insensitivity width")
    p.add_argument("--p", type=float, help="exponent of the Lp loss")
    p.add_argument("--mode", choices=("exact", "inexact"))
    p.add_argument("--kernel", choices=("gaussian", "laplacian"))
    bw = p.add_mutually_exclusive_group()
    bw.add_argument("--sigma", type=float)
    bw.add_argument("--sigma-median", action="store_true", help="median heuristic bandwidth")
    p.add_argument("--rff-dim", type=int)
    p.add_argument("--block-size", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--delta-max", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--tr-tol", type=float)
    p.add_argument("--max-tr-iter", type=int)
    p.add_argument("--max-cg-iter", type=int)
    p.add_argument("--literal-box-break", action="store_true", default=None)
    p.add_argument("--no-normalize", action="store_true")
    for name in ("partition", "rff", "split", "median"):
        p.add_argument(f"--seed-{name}", type=int)
    p.add_argument("--precision", choices=("single", "double"))
    p.add_argument("--log-every", type=int)
    p.add_argument("--primal-eval", choices=("off", "subsample", "full"))
    p.add_argument("--primal-subsample", type=int)
    p.add_argument("--val-rows", type=int)
    p.add_argument("--chunk", type=int)
    p.add_argument(
        "--lambda-grid",
        nargs="?",
        const="default",
        help="pick lambda on validation data; default grid 2^-7..2^7 or a comma list",
    )
    p.add_argument("--threads", type=int, help="cap BLAS threads")
    p.add_argument("--no-wall-clock", action="store_true", help="leave wall_seconds empty for reproducible logs")
    p.add_argument("--resume", metavar="MODEL", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_train)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dualkm", description="Kernel machines trained in the dual.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_train(sub)

    p = sub.add_parser("predict", help="score a dataset with a model file")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("-o", "--out", required=True, help="output CSV")
    p.add_argument("--proba", action="store_true", help="add a probability column (logistic models)")
    p.add_argument("--label-column", type=int, default=-1)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against labels")
    p.add_argument("predictions", help="CSV written by predict")
    p.add_argument("data", help="dataset holding the true labels")
    p.add_argument("--metrics", help=f"comma list from {sorted(METRICS)}")
    p.add_argument("--label-column", type=int, default=-1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="print model metadata")
    p.add_argument("model")
    p.set_defaults(func=cmd_inspect)
    return parser


def _config_from_args(args):
    overrides = {field: getattr(args, flag) for flag, field in _CONFIG_FLAGS.items()}
    if args.sigma_median:
        overrides["sigma"] = "median"
    if args.literal_box_break:
        overrides["literal_box_break"] = True
    if args.no_normalize:
        overrides["normalize"] = False
    try:
        return load_config(args.config, **overrides)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _grid(spec):
    if spec == "default":
        return LAMBDA_GRID
    try:
        grid = tuple(float(v) for v in spec.split(","))
    except ValueError:
        raise UsageError(f"bad --lambda-grid value {spec!r}") from None
    if not grid or any(not g > 0 for g in grid):
        raise UsageError("lambda grid values must be positive")
    return grid


# -- train ---------------------------------------------------------------------


class _LogWriter:
    """Convergence log rows, written synchronously from the solver callback."""

    def __init__(self, fh, config, val, prepared, clock, submodel_labels=None):
        self.writer = csv.writer(fh, lineterminator="\n")
        self.writer.writerow(LOG_COLUMNS)
        self.fh = fh
        self.config = config
        self.clock = clock
        self.start = time.perf_counter()
        self.val = None
        if val is not None:
            Xv = val.X[: config.val_rows]
            self.val = (prepared.transform(Xv, config.dtype), np.asarray(val.y[: config.val_rows], dtype=np.float64))
        self.submodel_labels = submodel_labels
        self.classes = (-1.0, 1.0)

    def _val_margins(self, problem, state):
        Xv = self.val[0]
        if problem.inexact:
            return (rff_map(problem.kernel, Xv).T @ state.theta).astype(np.float64)
        return kernel_matvec(problem.kernel, Xv, problem.X, state.alpha).astype(np.float64)

    def row(self, problem, state, submodel=None):
        cfg = self.config
        dual, primal, gap = problem.evaluate(
            state.alpha, state.theta, cfg.primal_eval, cfg.primal_subsample, seed=cfg.seed_partition, dual=state.objective
        )
        val_loss = metric_name = metric = None
        if self.val is not None and self.val[1].size:
            u = self._val_margins(problem, state)
            y = self.val[1]
            if submodel is not None:
                y = np.where(y == self.submodel_labels[submodel], 1.0, -1.0)
            elif problem.loss.classification:
                y = np.where(y == self.classes[1], 1.0, -1.0)
            val_loss = float(np.mean(problem.loss.primal(y, u)))
            if problem.loss.classification:
                metric_name, metric = "accuracy", accuracy(y, np.where(u >= 0, 1.0, -1.0))
            else:
                metric_name, metric = "rmse", rmse(y, u)
        wall = None if not self.clock else time.perf_counter() - self.start
        self.writer.writerow(
            [
                state.iteration,
                _fmt(wall),
                _fmt(dual),
                _fmt(primal),
                _fmt(gap),
                _fmt(val_loss),
                metric_name or "",
                _fmt(metric),
                "" if submodel is None else submodel,
            ]
        )
        self.fh.flush()


def _fit(train_set: Dataset, config, callback_factory=None):
    """Train binary/regression or one-vs-rest depending on loss and labels."""
    loss = config.make_loss()
    prepared = prepare(train_set.X, config)
    labels = np.unique(train_set.y)
    cb = None if callback_factory is None else callback_factory(prepared, labels)
    if loss.classification and labels.size > 2:
        return ovr_train(train_set.X, train_set.y, config, callback=cb, prepared=prepared)
    return train(train_set.X, train_set.y, config, callback=cb, prepared=prepared)


def _score(model, data: Dataset):
    """Validation score where larger is better."""
    if isinstance(model, OvrModel):
        return accuracy(data.y, ovr_predict(model, data.X))
    if model.loss.classification:
        return accuracy(data.y, predict_label(model, data.X))
    return -rmse(data.y, predict_raw(model, data.X))


def _select_lambda(train_set, val_set, config, grid):
    if val_set is None:
        fit_set, val_set = train_test_split(train_set, 0.8, config.seed_split)
    else:
        fit_set = train_set
    quiet = config.replace(primal_eval="off")
    best_lam, best = None, -np.inf
    for lam in grid:
        score = _score(_fit(fit_set, quiet.replace(lam=lam)), val_set)
        print(f"lambda={lam!r} score={score!r}", file=sys.stderr)
        if score > best:
            best_lam, best = lam, score
    return best_lam


def cmd_train(args) -> int:
    if args.resume:
        raise UsageError("resuming training is not supported; train again from scratch")
    config = _config_from_args(args)
    train_set = load_dataset(args.data, label_column=args.label_column)
    if train_set.n_samples == 0:
        raise DataFormatError(f"{args.data}: no samples")
    val_set = None
    if args.val:
        val_set = load_dataset(args.val, label_column=args.label_column, n_features=train_set.n_features)
    if args.lambda_grid:
        lam = _select_lambda(train_set, val_set, config, _grid(args.lambda_grid))
        print(f"selected lambda={lam!r}", file=sys.stderr)
        config = config.replace(lam=lam)

    with contextlib.ExitStack() as stack:
        factory = None
        if args.log:
            fh = stack.enter_context(open(args.log, "w", newline=""))

            def factory(prepared, labels):
                logw = _LogWriter(fh, config, val_set, prepared, not args.no_wall_clock, tuple(labels))
                if config.make_loss().classification and labels.size > 2:
                    return lambda k, problem, state: logw.row(problem, state, submodel=k)
                if labels.size == 2:
                    logw.classes = (float(labels[0]), float(labels[1]))
                return lambda problem, state: logw.row(problem, state)

        model = _fit(train_set, config, factory)
    save_model(args.model, model)
    meta = model.metadata
    print(
        f"trained {config.loss} ({config.mode}) for {meta['iterations']} iterations; "
        f"sigma={meta['sigma']!r} gap={meta['duality_gap']!r}",
        file=sys.stderr,
    )
    return EXIT_OK


# -- predict / evaluate / inspect --------------------------------------------------


def cmd_predict(args) -> int:
    model = load_model(args.model)
    n_features = model.models[0].n_features if isinstance(model, OvrModel) else model.n_features
    data = load_dataset(args.data, label_column=args.label_column, n_features=n_features)
    classify = model.loss.classification
    if args.proba and (isinstance(model, OvrModel) or model.loss.name != "logistic"):
        raise UsageError("probabilities are only available for binary logistic models")
    try:
        if isinstance(model, OvrModel):
            scores = model.decision_function(data.X)
            raw = scores.max(axis=1) if scores.size else np.zeros(0)
            labels = ovr_predict(model, data.X)
        else:
            raw = predict_raw(model, data.X)
            labels = predict_label(model, data.X) if classify else None
        proba = predict_proba(model, data.X) if args.proba else None
    except ValueError as exc:
        raise DataFormatError(str(exc)) from None
    header = ["index", "raw"] + (["label"] if classify else []) + (["probability"] if args.proba else [])
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(raw.shape[0]):
            row = [i, _fmt(raw[i])]
            if classify:
                row.append(_fmt(labels[i]))
            if args.proba:
                row.append(_fmt(proba[i]))
            w.writerow(row)
    return EXIT_OK


def _read_predictions(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataFormatError(f"{path}: no predictions")
    cols = {k: np.array([float(r[k]) for r in rows]) for k in rows[0] if k != "index"}
    return cols


def cmd_evaluate(args) -> int:
    preds = _read_predictions(args.predictions)
    data = load_dataset(args.data, label_column=args.label_column)
    y = np.asarray(data.y, dtype=np.float64)
    if y.shape[0] != preds["raw"].shape[0]:
        raise DataFormatError(f"{y.shape[0]} labels but {preds['raw'].shape[0]} predictions")
    if args.metrics:
        names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    else:
        names = ["accuracy", "auc"] if "label" in preds else ["rmse", "relative_error"]
    report = {}
    for name in names:
        if name not in METRICS:
            raise UsageError(f"unknown metric {name!r}; choose from {sorted(METRICS)}")
        if name == "accuracy":
            if "label" not in preds:
                raise UsageError("accuracy needs a label column in the predictions")
            report[name] = evaluate(y, preds["label"], [name])[name]
        else:
            scores = preds.get("probability", preds["raw"]) if name == "auc" else preds["raw"]
            report[name] = evaluate(y, scores, [name])[name]
    for name, value in report.items():
        print(f"{name}\t{value!r}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    meta = read_model_header(args.model)
    print(json.dumps(meta, indent=2, sort_keys=True))
    return EXIT_OK


# -- entry point -----------------------------------------------------------------


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    limiter = contextlib.nullcontext()
    if getattr(args, "threads", None):
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(args.threads)
    try:
        with limiter, warnings.catch_warnings():
            warnings.simplefilter("always")
            return args.func(args)
    except UsageError as exc:
        print(f"dualkm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"dualkm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataFormatError, ModelFormatError, OSError) as exc:
        print(f"dualkm: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"dualkm: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
