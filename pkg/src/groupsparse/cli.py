"""Command line entry point: ``groupsparse {run,oracle,synth,plots,defaults}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import traceback
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULTS, OUTPUT_ROOT_ENV, ConfigError, config_hash, load, output_dir, read_mapping
from .experiments import CSV_SCHEMA, RUNNERS, validate, write_summary
from .groups import GroupPartition
from .objectives import LeastSquaresObjective, MultinomialLogisticObjective, load_csv
from .oracle import best_support, estimate_rsc, verify_global_min
from .plots import export_plots
from .regularizers import CompositeRegularizer, QFunction
from .solvers import SolverConfig, solve_group_lasso
from .synth import generate_synthetic

log = logging.getLogger("groupsparse")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def cmd_run(args) -> int:
    try:
        cfg = load(args.config)
        validate(cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = output_dir(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    log.info("running %s (%s) into %s", cfg["name"], cfg["kind"], out)
    t0 = time.perf_counter()
    status, error, per_seed, summary = "ok", None, {}, []
    try:
        per_seed, summary = RUNNERS[cfg["kind"]](cfg, out)
    except Exception as e:  # report, keep partial artifacts
        status, error = "failed", f"{type(e).__name__}: {e}"
        log.error("run failed:\n%s", traceback.format_exc())
    results = {"kind": cfg["kind"], "name": cfg["name"], "config_hash": h, "config": cfg,
               "status": status, "error": error, "per_seed": per_seed, "summary": summary,
               "summary_columns": list(summary[0]) if summary else []}
    _dump(results, out / "results.json")
    write_summary(summary, out / "summary.csv")
    _dump(CSV_SCHEMA, out / "schema.json")
    _dump({"config_hash": h, "version": __version__, "wall_time_seconds": time.perf_counter() - t0,
           "timestamp": datetime.now(timezone.utc).isoformat(), "status": status}, out / "run.json")
    if status != "ok":
        print(f"error: {error} (partial artifacts in {out})", file=sys.stderr)
        return EXIT_RUNTIME
    for row in summary:
        print(json.dumps(row, default=_json_default))
    return EXIT_OK


def _oracle_objective(spec: dict, base: Path):
    path = Path(spec["data"])
    if not path.is_absolute():
        path = base / path
    X, y, _ = load_csv(path, spec.get("label_column", "y"))
    ridge = float(spec.get("ridge", 1e-2))
    loss = spec.get("loss", "least_squares")
    if loss == "least_squares":
        n = X.shape[1]
        P = GroupPartition.from_config(spec.get("partition", [[j] for j in range(n)]), n=n)
        return LeastSquaresObjective(X, y, partition=P, ridge=ridge)
    if loss == "logistic":
        K = int(y.max()) + 1
        n = X.shape[1] * K
        P = GroupPartition.from_config(spec.get("partition", [[j] for j in range(n)]), n=n)
        return MultinomialLogisticObjective(X, y.astype(int), K, partition=P, ridge=ridge)
    raise ValueError(f"unknown loss {loss!r}")


def cmd_oracle(args) -> int:
    try:
        spec = read_mapping(args.config)
        obj = _oracle_objective(spec, Path(args.config).parent)
        task = spec.get("task", "best_support")
        inner = SolverConfig.from_config(spec.get("solver"))
        if task not in ("best_support", "verify", "rsc"):
            raise ValueError(f"unknown oracle task {task!r}")
    except (ConfigError, ValueError, KeyError, TypeError, OSError) as e:
        print(f"error: invalid oracle config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if task == "best_support":
            S, beta, val = best_support(obj, int(spec.get("s", 1)), inner)
            out = {"task": task, "support": sorted(S), "beta": beta, "objective": val}
        elif task == "verify":
            R = CompositeRegularizer(QFunction.from_config(spec.get("q", "abs")), float(spec["lam"]), obj.partition)
            cand = spec.get("candidate", "group_lasso")
            beta = solve_group_lasso(obj, R.lam, inner).beta if cand == "group_lasso" else np.asarray(cand, float)
            v = verify_global_min(obj, R, beta, spec.get("grid"), seed=int(spec.get("seed", 0)), inner=inner)
            out = {"task": task, "candidate": beta, **v.__dict__}
        else:
            e = estimate_rsc(obj, int(spec.get("s", 1)), int(spec.get("samples", 200)), int(spec.get("seed", 0)))
            out = {"task": task, **e.__dict__}
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    text = json.dumps(out, indent=2, sort_keys=True, default=_json_default)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec = read_mapping(args.spec)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        out = Path(args.out)
    elif os.environ.get(OUTPUT_ROOT_ENV):
        out = Path(os.environ[OUTPUT_ROOT_ENV]) / f"synth_{spec.get('kind')}"
    else:
        out = Path(spec.get("output_dir", f"data/synth_{spec.get('kind')}"))
    try:
        generate_synthetic(spec, out)
    except (ValueError, TypeError) as e:
        print(f"error: infeasible synth spec: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(out)
    return EXIT_OK


def cmd_plots(args) -> int:
    try:
        files = export_plots(args.dir)
    except (FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    for f in files:
        print(f)
    return EXIT_OK


def cmd_defaults(args) -> int:
    body = DEFAULTS if args.kind is None else {args.kind: DEFAULTS[args.kind]}
    print(json.dumps(body, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="groupsparse", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<name> or results/<name>)")
    r.set_defaults(func=cmd_run)
    o = sub.add_parser("oracle", help="brute-force oracle on a CSV-backed objective")
    o.add_argument("config")
    o.add_argument("--out", help="also write the JSON answer here")
    o.set_defaults(func=cmd_oracle)
    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("spec")
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)
    pl = sub.add_parser("plots", help="export plot-ready .dat files for a results directory")
    pl.add_argument("dir")
    pl.set_defaults(func=cmd_plots)
    d = sub.add_parser("defaults", help="print default configs")
    d.add_argument("kind", nargs="?", choices=sorted(DEFAULTS))
    d.set_defaults(func=cmd_defaults)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
