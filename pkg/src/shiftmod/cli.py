"""Command-line front end: ``shiftmod analyze | simulate | report``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import report as rp
from .data import ShiftSpec, load_config, load_dataset
from .errors import ConfigError, DataError, ShiftmodError
from .pipeline import run_analysis
from .sim import DGPS, METRIC_COLUMNS, simulate_reps, summarize

log = logging.getLogger("shiftmod")


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("cannot create output directory %s: %s" % (out, exc)) from exc
    return out


def _parse_deltas(items):
    out = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError("--delta expects NAME=VALUE, got %r" % item)
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise ConfigError("--delta value for %s is not a number" % name) from None
    return out


def cmd_analyze(args) -> int:
    setup = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.folds is not None:
        overrides["folds"] = args.folds
    if args.threads is not None:
        overrides["threads"] = args.threads
    config = setup.config.with_(**overrides) if overrides else setup.config
    shift = setup.shift
    extra = _parse_deltas(args.delta)
    if extra:
        unknown = set(extra) - set(setup.roles.exposures)
        if unknown:
            raise ConfigError("--delta names unknown exposure(s): %s" % ", ".join(sorted(unknown)))
        shift = ShiftSpec({**shift.per_exposure_delta, **extra}, shift.units)
    data_path = Path(args.data) if args.data else setup.data_path
    if data_path is None:
        raise ConfigError("no data file: set [run] data = ... or pass --data")
    dataset = load_dataset(data_path, setup.roles)
    out = _out_dir(args.out)
    result = run_analysis(dataset, shift, config)
    doc = rp.analysis_document(result)
    doc["shift"]["requested"] = {"units": shift.units, "deltas": dict(shift.per_exposure_delta)}
    rp.write_csv(out / "fold_table.csv", doc["fold_table"], rp.FOLD_COLUMNS)
    rp.write_csv(out / "pooled_table.csv", doc["pooled_table"], rp.POOLED_COLUMNS)
    rp.write_csv(out / "variable_importance.csv", doc["variable_importance_table"], rp.VIM_COLUMNS)
    (out / "report.json").write_text(rp.dumps(doc))
    sys.stdout.write(rp.render_document(json.loads(rp.dumps(doc))))
    return 0


def _parse_ns(text) -> list[int]:
    try:
        ns = [int(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError:
        raise ConfigError("--ns expects comma-separated integers, got %r" % text) from None
    if not ns or min(ns) < 1:
        raise ConfigError("--ns needs at least one positive sample size")
    return ns


def cmd_simulate(args) -> int:
    if args.dgp not in DGPS:
        raise ConfigError("unknown dgp %r; choose from %s" % (args.dgp, ", ".join(DGPS)))
    ns = _parse_ns(args.ns)
    if args.reps < 1:
        raise ConfigError("--reps must be >= 1")
    if args.config:
        config = load_config(args.config).config
    else:
        from .data import AnalysisConfig

        config = AnalysisConfig()
    if args.folds is not None:
        config = config.with_(folds=args.folds)
    out = _out_dir(args.out)
    rows, reps_out = [], []
    for n in ns:
        reps = simulate_reps(args.dgp, n, args.reps, config, args.seed, args.threads or 1)
        rows.extend(summarize(reps, args.dgp, n))
        reps_out.extend(r.__dict__ for r in reps)
    metrics = [r.as_dict() for r in rows]
    rp.write_csv(out / "metrics.csv", metrics, METRIC_COLUMNS)
    doc = {"kind": "simulation", "dgp": args.dgp, "ns": ns, "reps": args.reps, "seed": args.seed,
           "config": config.to_dict(), "metrics": metrics, "replications": reps_out}
    (out / "metrics.json").write_text(rp.dumps(doc))
    sys.stdout.write(rp.render_document(json.loads(rp.dumps(doc))))
    return 0


def cmd_report(args) -> int:
    path = Path(args.input)
    if not path.is_file():
        raise DataError("report input not found: %s" % path)
    try:
        doc = json.loads(path.read_text())
        text = rp.render_document(doc)
    except (json.JSONDecodeError, ValueError, KeyError, TypeError) as exc:
        raise DataError("malformed report JSON: %s" % exc) from exc
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shiftmod", description="Effect modification of exposure shifts.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="run the cross-validated modifier search on a CSV")
    a.add_argument("--config", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--data", help="CSV path; overrides [run] data")
    a.add_argument("--seed", type=int)
    a.add_argument("--folds", type=int)
    a.add_argument("--threads", type=int)
    a.add_argument("--delta", action="append", metavar="NAME=VALUE", help="override one exposure's shift")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run a simulation grid")
    s.add_argument("--dgp", required=True)
    s.add_argument("--ns", required=True, help="comma-separated sample sizes")
    s.add_argument("--reps", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--folds", type=int)
    s.add_argument("--config", help="optional config for search/learner settings")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="render a JSON report as text tables")
    r.add_argument("input")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ShiftmodError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
