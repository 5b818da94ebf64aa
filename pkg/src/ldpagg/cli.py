"""Command-line entry point: run, baseline, budget, calibrate, analyze, validate.

Exit codes: 0 success, 1 validation/usage failure, 2 runtime abort.
All floating-point output uses 17 significant digits (round-trip exact),
and results are independent of --threads.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .algorithm import baseline_gradient_tracking, run as run_algorithm
from .analysis import fit_rate, sampling_grid
from .config import ConfigError, load_config
from .privacy import budget as privacy_budget, calibrate_noise, sensitivity_trajectory
from .schedules import check_conditions
from .topology import validate as validate_matrix

_COLUMN_ORDER = ["t", "err_to_opt_sq", "F_gap", "F_gap_runmean",
                 "grad_norm_sq", "consensus_x", "consensus_y",
                 "consensus_z", "tracker_err"]


def _fmt(x) -> str:
    return "%.17g" % float(x)


def _write_csv(path, ts, columns, eps_columns=None):
    names = [c for c in _COLUMN_ORDER if c == "t" or c in columns]
    eps_names = sorted(eps_columns) if eps_columns else []
    with open(path, "w") as f:
        f.write(",".join(names + eps_names) + "\n")
        for k in range(len(ts)):
            vals = [ts[k] if c == "t" else columns[c][k] for c in names]
            vals += [eps_columns[c][k] for c in eps_names]
            f.write(",".join(_fmt(v) for v in vals) + "\n")


def _read_csv(path):
    with open(path) as f:
        header = f.readline().strip().split(",")
        data = np.array([[float(v) for v in line.strip().split(",")]
                         for line in f if line.strip()])
    return header, data


def _eps_columns(cfg, grid):
    """Cumulative per-agent budget evaluated on the sampling grid.

    Returns None unless a sensitivity block and positive noise scales are
    configured; identical across seeds (the accountant is seed-free).
    """
    if cfg.sensitivity is None:
        return None
    s = cfg.schedules
    if any(n.sigma <= 0 for n in s.noise_x + s.noise_y + s.noise_z):
        return None
    traj = sensitivity_trajectory(cfg.T, cfg.sensitivity, warn=False)
    out = {}
    ts_all = np.arange(1, cfg.T + 1)
    for i in range(cfg.topology.m):
        terms = np.zeros(cfg.T + 1)
        if cfg.T:
            terms[1:] = (
                traj.dx[1:] / np.array([s.noise_x[i].laplace_param(t) for t in ts_all])
                + traj.dy[1:] / np.array([s.noise_y[i].laplace_param(t) for t in ts_all])
                + traj.dz[1:] / np.array([s.noise_z[i].laplace_param(t) for t in ts_all]))
        cum = np.cumsum(terms)
        out[f"eps_cum_a{i}"] = cum[np.asarray(grid, dtype=int)]
    return out


def _seed_worker(args):
    (problem, topology, schedules, T, seed, init_radius, baseline) = args
    if baseline:
        return baseline_gradient_tracking(problem, topology, schedules, T, seed,
                                          init_radius=init_radius)
    return run_algorithm(problem, topology, schedules, T, seed,
                         init_radius=init_radius)


def _cmd_run(args, baseline=False):
    cfg = load_config(args.config)
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    seeds = args.seeds if args.seeds is not None else cfg.seeds
    out_dir = args.out if args.out is not None else cfg.out
    os.makedirs(out_dir, exist_ok=True)
    grid = sampling_grid(cfg.T)
    seed_list = [cfg.master_seed + k for k in range(seeds)]
    jobs = [(cfg.problem, cfg.topology, cfg.schedules, cfg.T, s,
             cfg.init_radius, baseline) for s in seed_list]
    t0 = time.perf_counter()
    threads = args.threads if args.threads else (os.cpu_count() or 1)
    try:
        if threads > 1 and len(jobs) > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as ex:
                records = list(ex.map(_seed_worker, jobs))
        else:
            records = [_seed_worker(j) for j in jobs]
    except FloatingPointError as e:
        print(f"runtime abort: {e}", file=sys.stderr)
        return 2
    eps_cols = _eps_columns(cfg, grid)
    agg = {}
    for rec, seed in zip(records, seed_list):
        if rec.aborted_at is not None:
            print(f"warning: seed {seed} went non-finite at iteration "
                  f"{rec.aborted_at}", file=sys.stderr)
        eps = eps_cols
        if eps is not None and len(rec.ts) != len(grid):
            eps = {k: v[:len(rec.ts)] for k, v in eps.items()}
        _write_csv(os.path.join(out_dir, f"seed_{seed}.csv"),
                   rec.ts, rec.columns, eps)
    complete = [r for r in records if r.aborted_at is None]
    if complete:
        ts = complete[0].ts
        for c in complete[0].columns:
            agg[c] = np.mean([r.columns[c] for r in complete], axis=0)
        _write_csv(os.path.join(out_dir, "aggregate.csv"), ts, agg, eps_cols)
    manifest = {
        "config": cfg.raw,
        "version": __version__,
        "baseline": baseline,
        "seeds": seed_list,
        "master_seed": cfg.master_seed,
        "aborted": {str(s): r.aborted_at for s, r in zip(seed_list, records)
                    if r.aborted_at is not None},
        "wall_time_sec": time.perf_counter() - t0,
        "grid": [int(g) for g in grid],
        "warnings": cfg.warnings,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    print(f"wrote {len(records)} seed series to {out_dir}")
    return 0


def _cmd_budget(args):
    cfg = load_config(args.config)
    if cfg.sensitivity is None:
        print("error: config has no sensitivity block", file=sys.stderr)
        return 1
    horizon = args.horizon
    s = cfg.schedules
    print("agent,eps_x,eps_y,eps_z,eps_total,bound_inf")
    for i in range(cfg.topology.m):
        if horizon == "inf":
            from .privacy import infinite_horizon_bound
            b = infinite_horizon_bound(cfg.sensitivity, s.noise_x[i],
                                       s.noise_y[i], s.noise_z[i])
            print(f"{i},,,,,{_fmt(b)}")
            continue
        acct = privacy_budget(int(horizon), cfg.sensitivity, s.noise_x[i],
                              s.noise_y[i], s.noise_z[i],
                              source=args.source, warn=False)
        print(",".join([str(i), _fmt(acct.eps_x), _fmt(acct.eps_y),
                        _fmt(acct.eps_z), _fmt(acct.eps_total),
                        _fmt(acct.bound_inf)]))
    return 0


def _cmd_calibrate(args):
    cfg = load_config(args.config)
    if cfg.sensitivity is None:
        print("error: config has no sensitivity block", file=sys.stderr)
        return 1
    vsx, vsy, vsz = (cfg.schedules.noise_x[0].varsigma,
                     cfg.schedules.noise_y[0].varsigma,
                     cfg.schedules.noise_z[0].varsigma)
    try:
        sx, sy, sz = calibrate_noise(args.epsilon, cfg.sensitivity, vsx, vsy, vsz)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    patched = json.loads(json.dumps(cfg.raw))
    block = patched["schedules"]
    if "preset" in block:
        block["sigma"] = [sx, sy, sz]
    else:
        for ax, s in zip(("x", "y", "z"), (sx, sy, sz)):
            block["noise"][ax]["sigma"] = s
    text = json.dumps(patched, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
        print(f"wrote calibrated config to {args.out}")
    else:
        print(text)
    return 0


def _cmd_analyze(args):
    files = sorted(f for f in os.listdir(args.indir)
                   if f.startswith("seed_") and f.endswith(".csv"))
    if not files:
        print(f"error: no seed CSVs in {args.indir}", file=sys.stderr)
        return 1
    series = []
    ts = None
    for fname in files:
        header, data = _read_csv(os.path.join(args.indir, fname))
        if args.metric not in header:
            print(f"error: metric {args.metric!r} not in {fname}", file=sys.stderr)
            return 1
        if ts is None:
            ts = data[:, header.index("t")]
        series.append(data[:, header.index(args.metric)])
    window = None
    if args.window:
        a, b = args.window.split(",")
        window = (float(a), float(b))
    try:
        fit = fit_rate(ts, np.stack(series), window=window)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(json.dumps(fit.as_dict(), indent=2, sort_keys=True))
    mean = np.stack(series).mean(axis=0)
    out_csv = os.path.join(args.indir, f"mean_{args.metric}.csv")
    with open(out_csv, "w") as f:
        f.write(f"t,{args.metric}\n")
        for t, v in zip(ts, mean):
            f.write(f"{_fmt(t)},{_fmt(v)}\n")
    return 0


def _cmd_validate(args):
    cfg = load_config(args.config)
    rep = validate_matrix(np.asarray(cfg.topology.weights))
    print(f"topology: m={cfg.topology.m} w_bar={_fmt(cfg.topology.w_bar)} "
          f"rho2_abs={_fmt(cfg.topology.rho2_abs)} "
          f"contraction={_fmt(cfg.topology.contraction_norm)}")
    for name, passed, residual in rep.conditions():
        print(f"  [{'ok' if passed else 'FAIL'}] {name} (residual {residual:.3g})")
    crep = check_conditions(cfg.schedules, cfg.case)
    print(f"schedule conditions ({cfg.case.value}):")
    for name, passed in crep.checks:
        print(f"  [{'ok' if passed else 'FAIL'}] {name}")
    if crep.ok:
        print(f"  rate exponent: {_fmt(crep.rate_exponent)}")
    for w in cfg.warnings:
        print(f"warning: {w}")
    print("config ok")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ldpagg",
        description="LDP distributed aggregative optimization simulator "
                    "and privacy accountant")
    sub = parser.add_subparsers(dest="command")

    def add_config(p):
        p.add_argument("--config", required=True)

    p_run = sub.add_parser("run", help="simulate the main algorithm")
    p_base = sub.add_parser("baseline", help="simulate the gradient-tracking baseline")
    for p in (p_run, p_base):
        add_config(p)
        p.add_argument("--seeds", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--threads", type=int, default=0,
                       help="worker processes (default: available cores); "
                            "never affects results")

    p_budget = sub.add_parser("budget", help="cumulative privacy budget table")
    add_config(p_budget)
    p_budget.add_argument("--horizon", default="inf",
                          help="iteration count or 'inf'")
    p_budget.add_argument("--source", choices=["recursion", "closed_form"],
                          default="recursion")

    p_cal = sub.add_parser("calibrate", help="noise scales for a target budget")
    add_config(p_cal)
    p_cal.add_argument("--epsilon", type=float, required=True)
    p_cal.add_argument("--out", default=None)

    p_an = sub.add_parser("analyze", help="log-log rate fit over seed CSVs")
    p_an.add_argument("--in", dest="indir", required=True)
    p_an.add_argument("--metric", required=True)
    p_an.add_argument("--window", default=None, help="t_lo,t_hi")

    p_val = sub.add_parser("validate", help="check a config without running")
    add_config(p_val)

    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        if args.command == "run":
            return _cmd_run(args, baseline=False)
        if args.command == "baseline":
            return _cmd_run(args, baseline=True)
        if args.command == "budget":
            return _cmd_budget(args)
        if args.command == "calibrate":
            return _cmd_calibrate(args)
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "validate":
            return _cmd_validate(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except FloatingPointError as e:
        print(f"runtime abort: {e}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
