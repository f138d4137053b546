"""Command-line experiment runner: single comparisons and parameter sweeps."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .algorithm import BASELINES, run_baseline, run_daur
from .scenario import (SWEEP_PARAMS, ConfigError, ExperimentConfig, _parse_values,
                       generate_scenario, read_config, sweep_overrides)

METHODS = ("DAUR",) + BASELINES
EXIT_OK, EXIT_CONFIG, EXIT_FLAGGED = 0, 1, 2


def _g(v) -> str:
    return f"{float(v):.17g}"


def _solver_kwargs(cfg: ExperimentConfig) -> dict:
    s = cfg.solver
    return dict(eps1=s.tol_fp, eps2=s.tol_qcqp, eps3=s.tol_outer, max_outer=s.max_outer,
                max_fp=s.max_fp, max_qcqp=s.max_qcqp, phi_max=s.phi_max, rounding=s.rounding)


def run_methods(cfg: ExperimentConfig, seed: int, overrides: dict | None = None) -> dict:
    """DAUR and every baseline on one scenario. Pure; safe in a worker process."""
    spec = dataclasses.replace(cfg.spec, seed=seed)
    params = generate_scenario(spec, cfg.overrides if overrides is None else overrides)
    kw = _solver_kwargs(cfg)
    out = {"seed": seed, "params": params.to_dict(), "methods": {}}
    t = time.perf_counter()
    d = run_daur(params, max_seconds=cfg.solver.max_minutes * 60.0, **kw)
    out["methods"]["DAUR"] = dict(dpe=d.dpe, iterations=d.outer_iterations, status=d.status,
                                  wall=time.perf_counter() - t, alloc=d.alloc.to_dict(),
                                  flagged=d.status != "converged", trace=d.trace.rows)
    for kind in BASELINES:
        t = time.perf_counter()
        b = run_baseline(kind, params, seed=seed, **kw)
        out["methods"][kind] = dict(dpe=b.dpe, iterations=b.iterations, status=b.status,
                                    wall=time.perf_counter() - t, alloc=b.alloc.to_dict(),
                                    flagged=b.status != "ok")
    return out


def _pool_map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(fn, *j) for j in jobs]
        return [f.result() for f in futs]


def _seed_list(args, cfg) -> list[int]:
    base = cfg.spec.seed if args.seed is None else args.seed
    return list(range(base, base + max(1, args.seeds or 1)))


def _apply_tolerances(args, cfg: ExperimentConfig) -> ExperimentConfig:
    s = cfg.solver
    for flag, name in (("tol_outer", "tol_outer"), ("tol_fp", "tol_fp"), ("tol_qcqp", "tol_qcqp"),
                       ("max_minutes", "max_minutes")):
        val = getattr(args, flag)
        if val is not None:
            if val <= 0:
                raise ConfigError(f"--{flag.replace('_', '-')} must be positive", key=name)
            setattr(s, name, val)
    return cfg


def cmd_run(args) -> int:
    cfg = _apply_tolerances(args, read_config(args.config))
    seeds = _seed_list(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = sorted(_pool_map(run_methods, [(cfg, s) for s in seeds], args.workers),
                     key=lambda r: r["seed"])
    timing = not args.no_timing
    flagged = False
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "method", "dpe", "iterations", "wall_time_s", "status"])
        for r in results:
            for m in METHODS:
                e = r["methods"][m]
                flagged |= e["flagged"]
                w.writerow([r["seed"], m, _g(e["dpe"]), e["iterations"],
                            f"{e['wall']:.6f}" if timing else "", e["status"]])
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "method", "iteration", "phase", "inner_iterations", "objective",
                    "wall_time_s"])
        for r in results:
            for it, phase, inner, obj, wall in r["methods"]["DAUR"]["trace"]:
                w.writerow([r["seed"], "DAUR", it, phase, inner, _g(obj),
                            f"{wall:.6f}" if timing else ""])
    allocs = {str(r["seed"]): {m: r["methods"][m]["alloc"] for m in METHODS} for r in results}
    scen = {str(r["seed"]): r["params"] for r in results}
    _dump_json(out / "allocations.json", allocs)
    _dump_json(out / "scenario.json", scen)
    for r in results:
        line = "  ".join(f"{m}={r['methods'][m]['dpe']:.4f}" for m in METHODS)
        print(f"seed {r['seed']}: {line}")
    if flagged:
        print("warning: at least one solver result is flagged; see status column",
              file=sys.stderr)
        return EXIT_FLAGGED
    return EXIT_OK


def _dump_json(path, obj):
    # repr of a float round-trips, which is what %.17g guarantees for CSV
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _sweep_job(cfg, param, value, seed):
    return (value, seed, run_methods(cfg, seed, sweep_overrides(param, value, cfg.overrides)))


def cmd_sweep(args) -> int:
    cfg = _apply_tolerances(args, read_config(args.config))
    param = args.param or cfg.sweep.param
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"--param must be one of {', '.join(SWEEP_PARAMS)}", key="param")
    values = _parse_values(args.range, "range", None) if args.range else list(cfg.sweep.values)
    if not values:
        raise ConfigError("no sweep values; pass --range or set values in [sweep]", key="values")
    n_seeds = args.seeds or cfg.sweep.seeds
    base = cfg.spec.seed if args.seed is None else args.seed
    seeds = list(range(base, base + n_seeds))
    for v in values:
        try:
            sweep_overrides(param, v, cfg.overrides)
        except ValueError as exc:
            raise ConfigError(f"range error: {exc}", key="range") from None
    jobs = [(cfg, param, v, s) for v in values for s in seeds]
    res = _pool_map(_sweep_job, jobs, args.workers)
    res.sort(key=lambda r: (values.index(r[0]), r[1]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    flagged = False
    rows = []
    for v in values:
        group = [r[2] for r in res if r[0] == v]
        for m in METHODS:
            d = np.array([g["methods"][m]["dpe"] for g in group])
            flagged |= any(g["methods"][m]["flagged"] for g in group)
            rows.append((v, m, d.mean(), d.std(ddof=1) if d.size > 1 else 0.0, d.size))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "value", "method", "mean_dpe", "std_dpe", "n_seeds"])
        for v, m, mean, std, k in rows:
            w.writerow([param, v if isinstance(v, str) else _g(v), m, _g(mean), _g(std), k])
    for v in values:
        line = "  ".join(f"{m}={mean:.4f}" for vv, m, mean, _, _ in rows if vv == v)
        print(f"{param}={v}: {line}")
    if args.plot:
        _plot(out / f"sweep_{param}.svg", param, values, rows)
    if flagged:
        print("warning: at least one solver result is flagged", file=sys.stderr)
        return EXIT_FLAGGED
    return EXIT_OK


def _plot(path, param, values, rows):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = list(range(len(values))) if any(isinstance(v, str) for v in values) else values
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for m in METHODS:
        ax.plot(xs, [mean for v, mm, mean, _, _ in rows if mm == m], marker="o", label=m)
    if xs is not values:
        ax.set_xticks(xs, [str(v) for v in values])
    ax.set_xlabel(param)
    ax.set_ylabel("mean DPE")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="daur", description="Joint association and resource "
                                 "allocation experiments (DAUR and baselines).")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI experiment file")
        p.add_argument("--seed", type=int, help="first scenario seed (overrides config)")
        p.add_argument("--seeds", type=int, help="number of consecutive seeds")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--tol-outer", type=float, dest="tol_outer")
        p.add_argument("--tol-fp", type=float, dest="tol_fp")
        p.add_argument("--tol-qcqp", type=float, dest="tol_qcqp")
        p.add_argument("--max-minutes", type=float, dest="max_minutes",
                       help="wall-time budget per DAUR run")
        p.add_argument("--workers", type=int, default=1, help="worker processes")
        p.add_argument("--no-timing", action="store_true",
                       help="leave wall-time columns empty so outputs are byte-reproducible")

    r = sub.add_parser("run", help="DAUR and all baselines on the same scenarios")
    common(r)
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", help="mean DPE over a parameter grid")
    common(s)
    s.add_argument("--param", choices=SWEEP_PARAMS)
    s.add_argument("--range", help="'a:b:n' linspace or comma list (preference also takes 'mixed')")
    s.add_argument("--plot", action="store_true", help="write an SVG chart")
    s.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
