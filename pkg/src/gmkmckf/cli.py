"""Command line entry point: ``gmkmckf {simulate,sweep,bounds,fit-gaussian}``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import numpy as np

from .config import ConfigError, load_config
from .experiment import (RunFailure, bounds_report, parameter_sweep, parse_range,
                         run_monte_carlo, write_report)
from .noise import fit_gaussian_mse, noise_from_dict


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    changes = {}
    if args.runs is not None:
        changes["runs"] = args.runs
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.mode is not None:
        changes["mode"] = args.mode
    if changes:
        cfg = cfg.replace(**changes)
    out = args.out or cfg.out_dir or "out"
    csv_dir = None
    if cfg.per_run_csv and not args.no_csv:
        csv_dir = os.path.join(out, "runs")
        os.makedirs(csv_dir, exist_ok=True)
    report = run_monte_carlo(cfg, csv_dir=csv_dir)
    path = write_report(report, out)
    width = max(len(n) for n in report.observers)
    print(f"{'observer':<{width}}  {'x1':>9} {'x2':>9} {'x3':>9} {'tracking':>9}  iters  diverged")
    for name, res in report.observers.items():
        r = res.rmse
        print(f"{name:<{width}}  {r['x1']:9.4f} {r['x2']:9.4f} {r['x3']:9.4f} {r['tracking']:9.4f}"
              f"  {res.iterations_mean:5.2f}  {res.diverged_runs}/{report.runs}")
    print(f"mode={report.mode} runs={report.runs} seed={report.seed} -> {path}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    alphas, betas = parse_range(args.alpha), parse_range(args.beta1)
    result = parameter_sweep(cfg, alphas, betas, runs=args.runs)
    out = args.out or cfg.out_dir or "out"
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "sweep.csv")
    result.write_csv(path)
    with open(os.path.join(out, "sweep_baseline.json"), "w", encoding="utf-8") as fh:
        json.dump({"kf_dob_rmse_x1": result.baseline_rmse_x1, "runs": result.runs}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    print(f"KF-DOB disturbance RMSE on the same seeds: {result.baseline_rmse_x1:.4f}")
    for row in result.rows:
        print(f"alpha={row['alpha']:<6g} beta1={row['beta1']:<6g} rmse_x1={row['rmse_x1']:.4f} "
              f"divergence_rate={row['divergence_rate']:.2f}")
    print(f"-> {path}")
    return 0


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _cmd_bounds(args) -> int:
    cfg = load_config(args.config)
    rows = bounds_report(cfg)
    if not rows:
        print("no kernel observers in the configuration")
        return 0
    cols = ("observer", "alpha", "status", "xi", "gamma", "beta_star", "beta_plus",
            "recommended_min_beta", "min_beta", "satisfied")
    print("  ".join(f"{c:>12}" for c in cols))
    for r in rows:
        print("  ".join(f"{_fmt(r[c]):>12}" for c in cols))
    if args.json:
        print(json.dumps(rows, indent=2, sort_keys=True))
    return 0


def _cmd_fit(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        spec = json.load(fh)
    grid = None
    if "grid" in spec:
        g = spec.pop("grid")
        lo, hi, n = float(g["lower"]), float(g["upper"]), int(g["points"])
        if not (lo < hi and n >= 3):
            raise ValueError("grid needs lower < upper and at least 3 points")
        grid = np.linspace(lo, hi, n)
    target = noise_from_dict(spec)
    fit = fit_gaussian_mse(target, grid=grid)
    print(json.dumps({"mean": fit.mean, "var": fit.var, "mse": fit.mse}, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmkmckf", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="Monte Carlo comparison of the configured observers")
    s.add_argument("--config", required=True)
    s.add_argument("--runs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--mode", choices=("closed_loop", "open_loop"))
    s.add_argument("--no-csv", action="store_true", help="skip the per-run CSV files")
    s.set_defaults(func=_cmd_simulate)

    w = sub.add_parser("sweep", help="disturbance RMSE over an (alpha, beta1) grid")
    w.add_argument("--config", required=True)
    w.add_argument("--alpha", required=True, help="start:stop:step, inclusive")
    w.add_argument("--beta1", required=True, help="start:stop:step, inclusive")
    w.add_argument("--runs", type=int)
    w.add_argument("--out")
    w.set_defaults(func=_cmd_sweep)

    b = sub.add_parser("bounds", help="convergence certificate at a nominal step")
    b.add_argument("--config", required=True)
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=_cmd_bounds)

    f = sub.add_parser("fit-gaussian", help="least-squares Gaussian fit of a noise density")
    f.add_argument("--spec", required=True, help="JSON noise spec, optional 'grid' entry")
    f.set_defaults(func=_cmd_fit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except (ConfigError, RunFailure, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
