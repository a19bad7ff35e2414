"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 solver did not converge (results are
still written), 3 self-test failure.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .harness import (DatasetError, MaskScenario, SweepResult, apply_scenario,
                      generate_synthetic, load_dataset, run_sweep, write_graph, write_values)
from .selftest import CHECKS, run_checks
from .solver import ObservationSet, SolverConfig, evaluate, solve

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_SELFTEST = 0, 1, 2, 3

# flag name -> SolverConfig field
_SOLVER_FLAGS = {
    "lambda1": float, "lambda2": float, "tau": int, "mu0": float, "mu_growth": float,
    "mu_max": float, "epsilon": float, "max_iters": int, "cg_iters": int, "rank_k0": int,
    "rank_step": int, "rank_cap": int, "power_p": int, "oversample_s": int, "kernel": str,
    "period": int, "omega1": float, "omegaT": float, "init": str,
}
_RENAMED = {"max_iters": "max_outer_iters"}
_GRAPH_KEYS = ("sigma", "delta", "degree_mode")


def _add_solver_flags(p):
    g = p.add_argument_group("solver")
    for name, typ in _SOLVER_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    g.add_argument("--exact-svt", action="store_true", default=None,
                   help="use the exact t-SVT instead of the randomized one")
    g.add_argument("--config", type=Path, help="JSON file of solver settings (or a run manifest)")
    g.add_argument("--seed", type=int, default=None)
    gg = p.add_argument_group("graph")
    gg.add_argument("--sigma", type=float, default=None)
    gg.add_argument("--delta", type=float, default=None)
    gg.add_argument("--degree-mode", dest="degree_mode", choices=("in", "out"), default=None)


def _add_data_flags(p):
    p.add_argument("--values", type=Path, required=True)
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--intervals-per-day", dest="intervals_per_day", type=int, required=True)


def resolve_settings(args):
    """Defaults < config file < command-line flags. Returns (SolverConfig, graph kwargs)."""
    solver, graph = {}, {"sigma": None, "delta": 1.0, "degree_mode": "out"}
    if getattr(args, "config", None) is not None:
        doc = json.loads(Path(args.config).read_text())
        if "config" in doc and isinstance(doc["config"], dict):   # a run manifest
            graph.update(doc.get("graph", {}))
            doc = doc["config"]
        for key in _GRAPH_KEYS:
            if key in doc:
                graph[key] = doc.pop(key)
        solver.update(doc)
    for name in _SOLVER_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            solver[_RENAMED.get(name, name)] = v
    if getattr(args, "exact_svt", None):
        solver["exact_svt"] = True
    if getattr(args, "seed", None) is not None:
        solver["seed"] = args.seed
    for key in _GRAPH_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            graph[key] = v
    return SolverConfig.from_dict(solver), graph


def _manifest(command, config, graph, inputs, scenario=None):
    return {"tool": "letc", "version": __version__, "command": command,
            "config": config.to_dict(), "graph": graph, "inputs": inputs, "scenario": scenario,
            "seed": config.seed}


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n")


def cmd_krige(args) -> int:
    config, gkw = resolve_settings(args)
    ds = load_dataset(args.values, args.graph, args.intervals_per_day)
    graph = ds.graph(**gkw)
    obs = ObservationSet(values=np.where(ds.observed, ds.values, 0.0), mask=ds.observed,
                         intervals_per_day=ds.intervals_per_day)
    z_hat, diag = solve(obs, graph, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_values(out, z_hat, ds.location_ids)
    _write_json(out.with_name(out.name + ".diagnostics.json"), diag.to_dict())
    inputs = {"values": str(args.values), "graph": str(args.graph),
              "intervals_per_day": args.intervals_per_day}
    _write_json(out.with_name(out.name + ".manifest.json"),
                _manifest("krige", config, {**gkw, "sigma": graph.sigma}, inputs))
    print(f"wrote {out} ({z_hat.shape[0]} rows x {z_hat.shape[1]} locations), "
          f"iterations={diag.iterations}, converged={diag.converged}")
    if not diag.converged:
        print(f"solver did not converge within {config.max_outer_iters} iterations",
              file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _fmt_metric(v):
    return "-" if v is None else f"{v:.4f}"


def cmd_evaluate(args) -> int:
    config, gkw = resolve_settings(args)
    base_seed = config.seed if args.seed is None else args.seed
    scenarios = [MaskScenario(args.sm, args.tm, args.em, seed=base_seed + r)
                 for r in range(args.repeats)]
    ds = load_dataset(args.values, args.graph, args.intervals_per_day)
    graph = ds.graph(**gkw)
    rows = []
    print("repeat\tseed\tMAE\tRMSE\tWMAPE\titers\tconverged")
    for r, sc in enumerate(scenarios):
        obs, truth = apply_scenario(ds, sc)
        cfg = config.updated(seed=int(np.random.SeedSequence([base_seed, r]).generate_state(1)[0]))
        z_hat, diag = solve(obs, graph, cfg)
        m = evaluate(z_hat, truth, obs.holdout) if obs.holdout.any() else None
        rows.append(m)
        if m is None:
            print(f"{r}\t{sc.seed}\t-\t-\t-\t{diag.iterations}\t{diag.converged}")
        else:
            print(f"{r}\t{sc.seed}\t{_fmt_metric(m.mae)}\t{_fmt_metric(m.rmse)}\t"
                  f"{_fmt_metric(m.wmape)}\t{diag.iterations}\t{diag.converged}")
    name = scenarios[0].name
    done = [m for m in rows if m is not None]
    if not done:
        print(f"{name}: holdout set is empty; metrics absent")
    else:
        mae = np.array([m.mae for m in done])
        rmse = np.array([m.rmse for m in done])
        print(f"{name}: MAE/RMSE = {mae.mean():.2f}±{mae.std():.2f}/{rmse.mean():.2f}±{rmse.std():.2f}"
              f" over {len(done)} repeat(s)")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_json(out, {"scenario": name,
                          "repeats": [None if m is None else m.as_dict() for m in rows],
                          "manifest": _manifest("evaluate", config, gkw,
                                                {"values": str(args.values), "graph": str(args.graph),
                                                 "intervals_per_day": args.intervals_per_day},
                                                scenario={"sm": args.sm, "tm": args.tm,
                                                          "em": args.em, "seed": base_seed,
                                                          "repeats": args.repeats})})
    return EXIT_OK


def cmd_generate(args) -> int:
    ds, truth = generate_synthetic(args.locations, args.intervals_per_day, args.days,
                                   period=args.period, noise_sd=args.noise_sd, seed=args.seed)
    values = ds.values
    if args.unobserved > 0:
        obs, _ = apply_scenario(ds, MaskScenario(sm_rate=args.unobserved, seed=args.seed))
        values = np.where(obs.mask, ds.values, np.nan)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_values(out / "values.csv", values, ds.location_ids)
    write_values(out / "truth.csv", truth, ds.location_ids)
    write_graph(out / "graph.csv", ds)
    print(f"wrote {out}/values.csv, truth.csv, graph.csv "
          f"({ds.values.shape[0]} time points x {ds.values.shape[1]} locations)")
    return EXIT_OK


def _threads(arg):
    if arg:
        return arg
    env = os.environ.get("LETC_THREADS")
    return int(env) if env else (os.cpu_count() or 1)


def cmd_sweep(args) -> int:
    config, gkw = resolve_settings(args)
    ds = load_dataset(args.values, args.graph, args.intervals_per_day)
    scenarios = [MaskScenario(sm, tm, args.em, seed=config.seed)
                 for sm, tm in itertools.product(args.sm, args.tm)]
    lam1 = args.lambda1_grid or [config.lambda1]
    lam2 = args.lambda2_grid or [config.lambda2]
    taus = args.tau_grid or [config.tau]
    configs = [config.updated(lambda1=a, lambda2=b, tau=t)
               for a, b, t in itertools.product(lam1, lam2, taus)]
    seeds = [config.seed + r for r in range(args.repeats)]
    deltas = args.delta_grid or [gkw["delta"]]
    rows, failures = [], []
    for delta in deltas:
        res = run_sweep(ds, scenarios, configs, seeds=seeds, threads=_threads(args.threads),
                        graph=ds.graph(**{**gkw, "delta": delta}))
        if len(deltas) > 1:
            for r in res.rows:
                r["scenario"] = f"{r['scenario']}@delta={delta:g}"
        rows += res.rows
        failures += res.failures
    result = SweepResult(rows=rows, failures=failures)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.write(out)
    _write_json(out.with_name(out.name + ".summary.json"),
                {"summary": result.summary(), "failures": failures,
                 "manifest": _manifest("sweep", config, gkw,
                                       {"values": str(args.values), "graph": str(args.graph),
                                        "intervals_per_day": args.intervals_per_day})})
    print("scenario\tlambda1\tlambda2\ttau\tn\tMAE\tRMSE")
    for s in result.summary():
        print(f"{s['scenario']}\t{s['lambda1']:g}\t{s['lambda2']:g}\t{s['tau']}\t{s['n']}\t"
              f"{_fmt_metric(s['MAE_mean'])}±{_fmt_metric(s['MAE_std'])}\t"
              f"{_fmt_metric(s['RMSE_mean'])}±{_fmt_metric(s['RMSE_std'])}")
    if failures:
        print(f"{len(failures)} cell(s) failed; see {out.name}.summary.json", file=sys.stderr)
    return EXIT_OK


def cmd_selftest(args) -> int:
    if args.list:
        for name, fn in CHECKS.items():
            print(f"{name}\t{(fn.__doc__ or '').strip().splitlines()[0]}")
        return EXIT_OK
    results = run_checks(args.checks, fault=args.fault)
    failed = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}\t{r.name}\terror={r.error:.3e}\ttol={r.tolerance:.1e}")
        if not r.passed:
            failed.append(r.name)
    if failed:
        print(f"self-test failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_SELFTEST
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="letc", description="Low-rank tensor completion with graph regularisation for sensor kriging")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("krige", help="fill every missing entry of a value file")
    _add_data_flags(k)
    k.add_argument("--out", type=Path, required=True, help="output value file")
    _add_solver_flags(k)
    k.set_defaults(func=cmd_krige)

    e = sub.add_parser("evaluate", help="mask a dataset, krige it and score the masked entries")
    _add_data_flags(e)
    e.add_argument("--sm", type=float, default=0.3)
    e.add_argument("--tm", type=float, default=0.2)
    e.add_argument("--em", type=float, default=0.2)
    e.add_argument("--repeats", type=int, default=1)
    e.add_argument("--out", type=Path, help="optional JSON report")
    _add_solver_flags(e)
    e.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--locations", type=int, default=100)
    g.add_argument("--intervals-per-day", dest="intervals_per_day", type=int, default=48)
    g.add_argument("--days", type=int, default=14)
    g.add_argument("--period", type=int, default=7)
    g.add_argument("--noise-sd", dest="noise_sd", type=float, default=1.0)
    g.add_argument("--unobserved", type=float, default=0.0,
                   help="fraction of locations left blank in values.csv")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--out-dir", dest="out_dir", type=Path, required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("sweep", help="scenario x parameter grid")
    _add_data_flags(s)
    s.add_argument("--sm", type=float, nargs="+", default=[0.3])
    s.add_argument("--tm", type=float, nargs="+", default=[0.2])
    s.add_argument("--em", type=float, default=0.2)
    s.add_argument("--lambda1-grid", dest="lambda1_grid", type=float, nargs="+")
    s.add_argument("--lambda2-grid", dest="lambda2_grid", type=float, nargs="+")
    s.add_argument("--tau-grid", dest="tau_grid", type=int, nargs="+")
    s.add_argument("--delta-grid", dest="delta_grid", type=float, nargs="+")
    s.add_argument("--repeats", type=int, default=1)
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--out", type=Path, required=True, help="results table (CSV)")
    _add_solver_flags(s)
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("selftest", help="run the embedded oracle checks")
    t.add_argument("--list", action="store_true")
    t.add_argument("--fault", choices=sorted(CHECKS), help="inject a fault into one check")
    t.add_argument("checks", nargs="*")
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (FileNotFoundError, DatasetError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"letc {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
