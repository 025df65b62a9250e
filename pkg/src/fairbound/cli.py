"""Command-line entry point: ``fairbound {metrics,bound,train,synth}``.

Every option can also be set in a ``key=value`` configuration file passed
with ``--config`` (``#`` starts a comment, keys use the long option name
with dashes or underscores).  Command-line values win over file values.
Table schemas go in the same file as ``column.<name> = <role>`` lines.

Exit status is 0 on success, 2 for input or validation errors and 3 when a
numerical routine fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import pathlib
import sys

import numpy as np

from fairbound import __version__
from fairbound.bounds import NOTIONS, bound_curve, guarantee_report
from fairbound.core import (
    BaseRates,
    FairboundError,
    InfeasibleCoefficients,
    NumericalFailure,
    base_rates,
)
from fairbound.data import (
    ColumnSchema,
    adult_schema,
    dataset_schema,
    load_csv,
    read_csv,
    read_records_csv,
    synth_correlated,
    synth_exact,
    synth_muc_counterexample,
    write_dataset_csv,
    write_records_csv,
    write_sidecar,
)
from fairbound.learn import (
    PROFILES,
    ClassifierConfig,
    evaluate_representation,
    three_way_split,
    train_fair_encoder,
)
from fairbound.metrics import (
    CALIBRATION_NOTIONS,
    NoSharedBins,
    ScoreBinning,
    balanced_accuracy,
    calibration_disparities,
    disparity_opportunity,
    disparity_regret,
    muc,
    statistical_parity,
)
from fairbound.mmd import KernelSpec
from fairbound.nn import save_networks

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3
SEED_ENV = "FAIRBOUND_SEED"
ADULT_SPLIT = (13602, 13602, 13603)


class UsageError(Exception):
    """Bad user input detected after argument parsing."""


# ----------------------------------------------------------------------------
# configuration


def read_config(path) -> tuple[dict, dict]:
    """Parse a ``key=value`` file into ``(options, schema columns)``."""
    options, columns = {}, {}
    try:
        text = pathlib.Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = key.strip(), value.strip()
        if key.startswith("column."):
            columns[key[len("column."):]] = value
        else:
            options[key.replace("-", "_")] = value
    return options, columns


def fmt(value):
    """Round every float in a JSON-able structure to 6 significant digits.

    >>> fmt({"a": 0.123456789, "b": [float("nan"), 2]})
    {'a': 0.123457, 'b': [None, 2]}
    """
    if isinstance(value, dict):
        return {k: fmt(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [fmt(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return None
        return float(f"{value:.6g}")
    return value


def report(meta, rates=None, estimates=None, metrics=None, guarantees=None) -> dict:
    return fmt({
        "meta": meta,
        "rates": rates or {},
        "estimates": estimates or {},
        "metrics": metrics or {},
        "guarantees": guarantees or {},
    })


def _emit_json(doc, out):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        pathlib.Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _rates_dict(rates: BaseRates) -> dict:
    return {"r": rates.r, "a": rates.a, "b": rates.b}


def _guarantees_dict(rep) -> dict:
    out = dict(rep.bounds)
    out["calibration_lower_bound"] = rep.calibration_lower_bound
    out["tradeoff_beta_lower_bound"] = rep.tradeoff_beta_lower_bound
    out["monotone"] = rep.monotone
    return out


def _seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None


# ----------------------------------------------------------------------------
# metrics


def cmd_metrics(args) -> int:
    notions = _notion_list(args.notions, NOTIONS + ("muc",))
    p = read_records_csv(args.predictions)
    if p.score is None:
        needs = [n for n in notions if n in CALIBRATION_NOTIONS]
        if needs:
            raise UsageError(f"column 'score' is required for {', '.join(needs)}")
    binning = ScoreBinning(args.binning, args.bins)
    dopp = disparity_opportunity(p) if {"dopp", "dodds"} & set(notions) else None
    dr = disparity_regret(p) if {"dr", "dodds"} & set(notions) else None
    values = {}
    if "sp" in notions:
        values["sp"] = statistical_parity(p)
    if "dopp" in notions:
        values["dopp"] = dopp
    if "dr" in notions:
        values["dr"] = dr
    if "dodds" in notions:
        values["dodds"] = 0.5 * (dopp + dr)
    meta = {"command": "metrics", "input": str(args.predictions), "n": len(p),
            "binning": binning.mode, "version": __version__}
    if set(notions) & set(CALIBRATION_NOTIONS):
        dpc, dnc, dc = calibration_disparities(p, binning)
        for k, v in (("dpc", dpc), ("dnc", dnc), ("dc", dc)):
            if k in notions:
                values[k] = v
        bins, n_bins = binning.assign(p.score)
        meta["bins"] = n_bins
        meta["occupied_bins"] = int(np.unique(bins).size)
    if "muc" in notions:
        try:
            m = muc(p, binning)
            values["muc"] = m.value
            meta["muc_shared_bins"], meta["muc_skipped_bins"] = m.shared_bins, m.skipped_bins
        except NoSharedBins as exc:
            values["muc"] = None
            meta["muc_note"] = str(exc)
    rates = base_rates(p)
    estimates = {"balanced_accuracy": balanced_accuracy(p)}
    _emit_json(report(meta, _rates_dict(rates), estimates, values), args.out)
    return EXIT_OK


def _notion_list(text, allowed) -> tuple[str, ...]:
    if not text:
        return tuple(allowed)
    chosen = tuple(t.strip().lower() for t in text.split(",") if t.strip())
    unknown = [t for t in chosen if t not in allowed]
    if unknown:
        raise UsageError(f"unknown notion(s) {unknown}; choose from {', '.join(allowed)}")
    return chosen


# ----------------------------------------------------------------------------
# bound


def _unit(name, value, open_interval=False):
    ok = 0.0 < value < 1.0 if open_interval else 0.0 <= value <= 1.0
    if not ok:
        span = "(0, 1)" if open_interval else "[0, 1]"
        raise UsageError(f"--{name} must lie in {span}, got {value}")
    return value


def cmd_bound(args) -> int:
    rates = BaseRates(*(_unit(k, getattr(args, k), True) for k in ("r", "a", "b")))
    if args.grid:
        return _bound_grid(args, rates)
    alpha, beta = _unit("alpha", args.alpha), _unit("beta", args.beta)
    rep = guarantee_report(rates, alpha, beta)
    meta = {"command": "bound", "version": __version__}
    _emit_json(report(meta, _rates_dict(rates), {"alpha": alpha, "beta": beta},
                      guarantees=_guarantees_dict(rep)), args.out)
    return EXIT_OK


def _bound_grid(args, rates) -> int:
    if args.grid < 2:
        raise UsageError("--grid needs at least 2 points per axis")
    ticks = np.linspace(0.0, 1.0, args.grid)
    grid = [(al, be) for al in ticks for be in ticks]
    notions = _notion_list(args.notions, NOTIONS)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["notion", "alpha", "beta", "guarantee"])
    for obj in notions:
        curve = bound_curve(obj, rates, grid)
        for al, be, v in curve.rows():
            w.writerow([obj, f"{al:.6g}", f"{be:.6g}", "" if not math.isfinite(v) else f"{v:.6g}"])
        print(f"{obj}: slope estimate {curve.slope:.6g}", file=sys.stderr)
    if args.out:
        pathlib.Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# ----------------------------------------------------------------------------
# train


def _schema(args, columns) -> ColumnSchema:
    if columns:
        return ColumnSchema.parse(columns)
    if args.schema is None:
        # the sidecar written next to the CSV by ``fairbound synth``
        sidecar = pathlib.Path(args.dataset).with_suffix(".json")
        if not sidecar.is_file():
            raise UsageError("no schema: pass --schema (adult, or a sidecar JSON) or column.<name> lines in --config")
        args.schema = str(sidecar)
    if args.schema == "adult":
        return adult_schema()
    path = pathlib.Path(args.schema)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read schema {path}: {exc}") from None
    return ColumnSchema.parse(doc.get("schema", doc))


def check_target_leak(dataset) -> None:
    """Refuse feature columns that are relabelled copies of a target."""
    for name, y in dataset.targets.items():
        for j, col in enumerate(dataset.X.T):
            vals = np.unique(col)
            if len(vals) != 2 or len(np.unique(y)) != 2:
                continue
            pairs = {(c, t) for c, t in zip(col.tolist(), y.tolist())}
            if len(pairs) == 2:
                raise UsageError(f"feature {dataset.feature_names[j]!r} reproduces target {name!r}; "
                                 "the encoder must not read target columns")


def _train_config(args, seed):
    base = PROFILES[args.profile]
    overrides = {}
    for key in ("dim", "rounds", "epochs_per_round", "batch_size", "lr", "momentum", "grad_clip",
                "lambda_init", "epsilon", "lambda_min", "lambda_max", "code_norm", "output_activation"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.hidden is not None:
        overrides["hidden"] = tuple(int(h) for h in args.hidden.split(",") if h.strip())
    if args.lr_milestones is not None:
        overrides["lr_milestones"] = tuple(int(h) for h in args.lr_milestones.split(",") if h.strip())
    if any(getattr(args, k) is not None for k in ("kernel", "lengthscale", "shape")):
        k = base.kernel
        overrides["kernel"] = KernelSpec(args.kernel or k.family,
                                         args.lengthscale if args.lengthscale is not None else k.lengthscale,
                                         args.shape if args.shape is not None else k.shape)
    if args.no_regulate:
        overrides["regulate"] = False
    return base.replace(seed=seed, **overrides)


def cmd_train(args, columns) -> int:
    seed = _seed(args)
    schema = _schema(args, columns)
    n = len(read_csv(args.dataset, schema).rows)
    if args.split:
        sizes = tuple(int(v) for v in args.split.split(","))
    elif n == sum(ADULT_SPLIT):
        sizes = ADULT_SPLIT
    else:
        sizes = None
    try:
        owner, user_train, user_test = three_way_split(n, seed, sizes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    # scaling statistics come from the encoder-training rows only
    data, encoder = load_csv(args.dataset, schema, fit_rows=owner, return_encoder=True)
    check_target_leak(data)
    config = _train_config(args, seed)
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    model = train_fair_encoder(data.subset(owner), config, log=log)

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_networks(out / "model.fbnn", model.networks())
    model.write_history(out / "history.csv")
    (out / "encoder.json").write_text(json.dumps(encoder.to_dict(), indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")

    clf = ClassifierConfig(epochs=args.classifier_epochs, seed=seed, arch=args.classifier)
    evals = evaluate_representation(model, data.subset(user_train), data.subset(user_test),
                                    adversary=clf, task=clf)
    estimates, metrics, guarantees, rates = {}, {}, {}, {}
    for ev in evals:
        estimates[ev.target] = {"alpha": ev.alpha_hat, "adversary_ba": ev.adversary_ba,
                                "beta": ev.beta_hat, "task_ba": ev.task_ba}
        metrics[ev.target] = ev.metrics.as_dict()
        rates[ev.target] = _rates_dict(ev.rates)
        guarantees[ev.target] = "infeasible" if ev.guarantees is None else _guarantees_dict(ev.guarantees)
    last = model.history[-1]
    meta = {
        "command": "train",
        "input": str(args.dataset),
        "version": __version__,
        "seed": seed,
        "profile": args.profile,
        "split": [len(owner), len(user_train), len(user_test)],
        "config": _config_meta(config),
        "final_lambda": last.lam,
        "final_mmd2": last.mmd2,
    }
    doc = report(meta, rates, estimates, metrics, guarantees)
    _emit_json(doc, out / "evaluation.json")
    _emit_json(doc, args.out)
    if args.verbose:
        print(f"wrote {out}/model.fbnn, history.csv, encoder.json, evaluation.json", file=sys.stderr)
    return EXIT_OK


def _config_meta(config) -> dict:
    out = {}
    for key, value in config.__dict__.items():
        if isinstance(value, KernelSpec):
            value = {"family": value.family, "lengthscale": value.lengthscale, "shape": value.shape}
        elif isinstance(value, tuple):
            value = list(value)
        out[key] = value
    return out


# ----------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    seed = _seed(args)
    out = pathlib.Path(args.out)
    sidecar = out.with_suffix(".json")
    params = {"generator": args.generator, "n": args.n, "seed": seed}
    if args.generator == "muc":
        records, z = synth_muc_counterexample(args.n, args.delta, seed)
        write_records_csv(out, records, z)
        params.update(delta=args.delta, columns=["z", "s", "y", "score"])
    elif args.generator == "correlated":
        d = synth_correlated(args.n, args.p1, args.p2, args.r, seed)
        write_dataset_csv(out, d)
        params.update(r=args.r, p1=args.p1, p2=args.p2, schema=dataset_schema(d).as_strings())
    else:
        d, _ = synth_exact(args.n, args.r, args.rate, seed)
        write_dataset_csv(out, d)
        params.update(r=args.r, a=args.rate, b=args.rate, schema=dataset_schema(d).as_strings())
    write_sidecar(sidecar, params)
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairbound", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fairbound {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--out", help="output file (default: stdout)")
        return p

    m = common(sub.add_parser("metrics", help="fairness metrics of a prediction CSV"))
    m.add_argument("predictions", help="CSV with columns s, y, score[, yhat]")
    m.add_argument("--binning", choices=("grid", "distinct"), default="grid")
    m.add_argument("--bins", type=int, default=101, help="grid points on [0, 1] (default 101)")
    m.add_argument("--notions", help="comma-separated subset of " + ",".join(NOTIONS + ("muc",)))

    b = common(sub.add_parser("bound", help="fairness guarantees for given base rates and coefficients"))
    for name, text in (("r", "P(S=1)"), ("a", "P(Y=1|S=0)"), ("b", "P(Y=1|S=1)")):
        b.add_argument(f"--{name}", type=float, required=False, help=text)
    b.add_argument("--alpha", type=float, default=0.0, help="fairness coefficient")
    b.add_argument("--beta", type=float, default=0.0, help="discriminativeness coefficient")
    b.add_argument("--grid", type=int, default=0, help="emit a CSV over a GRID x GRID (alpha, beta) grid")
    b.add_argument("--notions", help="notions for --grid (default: all)")

    t = common(sub.add_parser("train", help="train a fair encoder and evaluate it as a data user"))
    t.add_argument("dataset", help="headed CSV")
    t.add_argument("--schema", help="'adult' or a JSON file with a 'schema' mapping")
    t.add_argument("--out-dir", default="fairbound-run")
    t.add_argument("--profile", choices=sorted(PROFILES), default="adult")
    t.add_argument("--split", help="encoder,user-train,user-test row counts")
    t.add_argument("--seed", type=int)
    t.add_argument("--dim", type=int)
    t.add_argument("--hidden", help="comma-separated hidden widths ('' for a linear encoder)")
    t.add_argument("--rounds", type=int)
    t.add_argument("--epochs-per-round", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lr-milestones", help="comma-separated epochs at which lr drops tenfold")
    t.add_argument("--momentum", type=float)
    t.add_argument("--grad-clip", type=float)
    t.add_argument("--kernel", choices=("rq", "gaussian"))
    t.add_argument("--lengthscale", type=float)
    t.add_argument("--shape", type=float)
    t.add_argument("--lambda-init", type=float)
    t.add_argument("--lambda-min", type=float)
    t.add_argument("--lambda-max", type=float)
    t.add_argument("--epsilon", type=float)
    t.add_argument("--no-regulate", action="store_true", help="keep lambda fixed at --lambda-init")
    t.add_argument("--code-norm", choices=("none", "standardize", "whiten"))
    t.add_argument("--output-activation", choices=("identity", "tanh"))
    t.add_argument("--classifier-epochs", type=int, default=20)
    t.add_argument("--classifier", choices=("mlp", "7net"), default="mlp",
                   help="adversary and task network: three hidden layers of 64, or the seven-layer skip net")
    t.add_argument("--verbose", action="store_true")

    s = common(sub.add_parser("synth", help="write a synthetic population and its parameters"))
    s.add_argument("generator", choices=("muc", "correlated", "exact"))
    s.add_argument("--n", type=int, default=10000)
    s.add_argument("--seed", type=int)
    s.add_argument("--delta", type=float, default=0.01, help="atom mass (muc)")
    s.add_argument("--p1", type=float, default=0.5, help="P(T1=1|S=0) (correlated)")
    s.add_argument("--p2", type=float, default=0.5, help="P(T1=1|S=1) (correlated)")
    s.add_argument("--r", type=float, default=0.5, help="P(S=1)")
    s.add_argument("--rate", type=float, default=0.5, help="shared positive rate (exact)")
    return parser


_BOOLEAN = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def _apply_config(parser, argv):
    """Re-parse ``argv`` with file values installed as defaults."""
    first, _ = parser.parse_known_args(argv)
    if not getattr(first, "config", None):
        return parser.parse_args(argv), {}
    options, columns = read_config(first.config)
    sub = _subparser(parser, first.command)
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in options.items():
        action = known.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"{first.config}: unknown key {key!r} for '{first.command}'")
        if action.nargs == 0:
            if value.lower() not in _BOOLEAN:
                raise UsageError(f"{first.config}: {key} expects a boolean, got {value!r}")
            defaults[key] = _BOOLEAN[value.lower()]
        else:
            # argparse converts string defaults with the option's type
            defaults[key] = value
    for action in sub._actions:
        if action.dest in defaults and action.required:
            action.required = False
    sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    for action in sub._actions:
        if action.dest in defaults and action.choices is not None:
            if getattr(args, action.dest) not in action.choices:
                raise UsageError(f"{first.config}: {action.dest}={getattr(args, action.dest)!r} "
                                 f"not one of {list(action.choices)}")
    return args, columns


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args, columns = _apply_config(parser, argv)
        if args.command == "bound":
            missing = [k for k in ("r", "a", "b") if getattr(args, k) is None]
            if missing:
                raise UsageError(f"bound needs --{', --'.join(missing)}")
            return cmd_bound(args)
        if args.command == "metrics":
            return cmd_metrics(args)
        if args.command == "train":
            return cmd_train(args, columns)
        return cmd_synth(args)
    except UsageError as exc:
        print(f"fairbound: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleCoefficients as exc:
        print(f"fairbound: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalFailure as exc:
        print(f"fairbound: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FairboundError, ValueError) as exc:
        print(f"fairbound: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"fairbound: error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
