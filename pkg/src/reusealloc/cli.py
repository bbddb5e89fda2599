"""Command-line entry point: ``reusealloc {allocate,evaluate,sweep,powerctl}``.

Exit codes: 0 success, 2 bad configuration or input file, 3 traffic outside
the feasible region, 4 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import records
from .baselines import orthogonal_load, solve_orthogonal, throughput_margin
from .bounds import bounds_report
from .conservative import conservative_delay, full_reuse, solve_p1
from .network import ConfigError, EfficiencyTable, Scenario, build_table, load_scenario, proportional_rates
from .powerctl import TRAJECTORY_COLUMNS, alternate
from .queuesim import simulate
from .refined import refined_delay
from .refined_opt import solve_p2
from .simplex import InfeasibleError, SolverError, SolverOptions

log = logging.getLogger("reusealloc")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 2, 3, 4
SCHEMES = ("conservative", "refined", "orthogonal", "full-reuse")
WORKERS_ENV = "REUSEALLOC_WORKERS"
DEFAULT_HORIZON = 1_000_000

SWEEP_COLUMNS = ("load", "scheme", "mean_rate", "analytic_model", "analytic_delay",
                 "sim_delay", "sim_stderr")


def solve_scheme(scheme: str, tbl, lam, opts: SolverOptions):
    """Allocation and analytic report for one scheme.

    The report uses the model the scheme optimizes; full reuse, which couples
    every cell, is reported under the refined model.
    """
    if scheme == "conservative":
        return solve_p1(tbl, lam, opts)
    if scheme == "refined":
        x, rep, _ = solve_p2(tbl, lam, opts)
        return x, rep
    if scheme == "orthogonal":
        return solve_orthogonal(tbl, lam, opts)
    if scheme == "full-reuse":
        x = full_reuse(tbl.n)
        return x, refined_delay(x, tbl, lam)
    raise ValueError(f"unknown scheme {scheme!r}")


def _options(args) -> SolverOptions:
    opts = SolverOptions()
    if getattr(args, "tol", None) is not None:
        opts.tol = args.tol
    return opts


def _margin_or_none(tbl, lam):
    return throughput_margin(tbl, lam) if np.any(lam > 0) else None


def _infeasible(exc: InfeasibleError, tbl, lam) -> int:
    rho = _margin_or_none(tbl, lam)
    print(f"infeasible: {exc}", file=sys.stderr)
    if rho is not None:
        print(f"throughput margin rho* = {rho:.9g}", file=sys.stderr)
    return EXIT_INFEASIBLE


def cmd_allocate(args) -> int:
    sc = load_scenario(args.config)
    tbl = build_table(sc)
    lam = sc.arrival_rates
    try:
        x, rep = solve_scheme(args.scheme, tbl, lam, _options(args))
    except InfeasibleError as exc:
        return _infeasible(exc, tbl, lam)
    try:
        bnd = bounds_report(x, tbl, lam)
    except InfeasibleError:
        bnd = None
    rec = records.allocation_record(x, args.scheme, lam, rep, bnd,
                                    extra={"config": str(args.config)})
    out = Path(args.out)
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "allocation.json"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    records.dump(rec, out)
    print(f"{args.scheme}: T = {rep.T:.6g} s over {len(x.support())} patterns -> {out}")
    for entry in rec["support"]:
        print(f"  {entry['pattern']:<20} {entry['fraction']:.6f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    """Re-evaluate a saved allocation on a scenario (round-trip check)."""
    sc = load_scenario(args.config)
    tbl = build_table(sc)
    try:
        x, rec = records.read_allocation(args.allocation)
    except records.RecordError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if x.n != sc.n:
        print(f"error: allocation has n={x.n}, scenario has n={sc.n}", file=sys.stderr)
        return EXIT_CONFIG
    model = args.model or rec.get("report", {}).get("model", "conservative")
    try:
        rep = conservative_delay(x, tbl, sc.arrival_rates) if model == "conservative" \
            else refined_delay(x, tbl, sc.arrival_rates)
    except InfeasibleError as exc:
        return _infeasible(exc, tbl, sc.arrival_rates)
    print(json.dumps(records.to_jsonable(rep.to_dict()), indent=2))
    return EXIT_OK


def _parse_list(text: str, conv):
    try:
        vals = [conv(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("--loads/--seeds", f"cannot parse {text!r}") from None
    if not vals:
        raise ConfigError("--loads", "grid is empty")
    return vals


def _base_rates(sc: Scenario) -> np.ndarray:
    """Traffic direction for sweeps: the config's rates, else proportional to r[i, N]."""
    lam = sc.arrival_rates
    return lam if np.any(lam > 0) else proportional_rates(sc, 1.0)


def _sweep_point(task):
    """One (load, scheme) point, simulated for every seed. Runs in a worker."""
    load, scheme, lam, tbl_s, seeds, horizon, tol = task
    tbl = EfficiencyTable(tbl_s)
    n = tbl.n
    opts = SolverOptions(tol=tol) if tol is not None else SolverOptions()
    row = {"load": load, "scheme": scheme, "mean_rate": float(lam.mean()),
           "analytic_model": "refined" if scheme in ("refined", "full-reuse") else "conservative",
           "analytic_delay": "", "sim_delay": "", "sim_stderr": "", "status": "ok"}
    for i in range(n):
        row[f"util_{i + 1}"] = ""
    try:
        x, rep = solve_scheme(scheme, tbl, lam, opts)
    except InfeasibleError as exc:
        row["status"] = "infeasible" + (f" (margin {exc.margin:.6g})" if exc.margin else "")
        return row, None
    except (SolverError, np.linalg.LinAlgError) as exc:
        row["status"] = f"solver-error: {exc}"
        return row, None
    row["analytic_delay"] = rep.T
    if not horizon:
        return row, None
    sims = [simulate(x, tbl, lam, horizon, seed=s) for s in seeds]
    row["sim_delay"] = float(np.mean([r.pooled_mean for r in sims]))
    row["sim_stderr"] = float(np.sqrt(np.sum([r.pooled_stderr ** 2 for r in sims])) / len(sims))
    util = np.mean([r.utilization for r in sims], axis=0)
    for i in range(n):
        row[f"util_{i + 1}"] = float(util[i])
    if any(r.unstable for r in sims):
        row["status"] = "unstable"
    width = max(r.cdf.shape[1] for r in sims)

    def pad(c):
        return np.pad(c, ((0, 0), (0, width - c.shape[1])), constant_values=1.0)

    cdf = np.mean([pad(r.cdf) for r in sims], axis=0)
    return row, cdf


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(WORKERS_ENV, f"expected an integer, got {raw!r}") from None


def cmd_sweep(args) -> int:
    sc = load_scenario(args.config)
    tbl = build_table(sc)
    loads = _parse_list(args.loads, float)
    seeds = _parse_list(args.seeds, int)
    schemes = _parse_list(args.scheme, str)
    bad = [s for s in schemes if s not in SCHEMES]
    if bad:
        raise ConfigError("--scheme", f"unknown scheme(s) {bad}; choose from {list(SCHEMES)}")
    base = _base_rates(sc)
    rho = throughput_margin(tbl, base)
    scale = rho if args.load_unit == "rho" else 1.0 / base.mean()
    tasks = [(load, scheme, base * load * scale, np.array(tbl.s), seeds, args.horizon, args.tol)
             for load in loads for scheme in schemes]
    workers = _workers()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    out = Path(args.out)
    (out / "cdf").mkdir(parents=True, exist_ok=True)
    cols = list(SWEEP_COLUMNS) + [f"util_{i + 1}" for i in range(sc.n)] + ["status"]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for k, (row, cdf) in enumerate(results):
            w.writerow(row)
            if cdf is not None:
                _write_cdf(out / "cdf" / f"point{k:03d}_{row['scheme']}.csv", row["load"], cdf)
    records.dump({"schema": records.SWEEP_SCHEMA, "config": str(args.config),
                  "load_unit": args.load_unit, "rho_star": rho, "base_rates": base,
                  "loads": loads, "schemes": schemes, "seeds": seeds, "horizon": args.horizon,
                  "columns": cols, "orthogonal_load_at_unit": orthogonal_load(tbl, base * scale)},
                 out / "sweep.json")
    print(f"{len(results)} points -> {out / 'sweep.csv'}")
    return EXIT_OK


def _write_cdf(path: Path, load: float, cdf: np.ndarray) -> None:
    n = cdf.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["load", "length", "pooled"] + [f"cell_{i + 1}" for i in range(n)])
        pooled = cdf.mean(axis=0)
        for length in range(cdf.shape[1]):
            w.writerow([load, length, repr(float(pooled[length]))]
                       + [repr(float(v)) for v in cdf[:, length]])


def cmd_powerctl(args) -> int:
    sc = load_scenario(args.config)
    lam = sc.arrival_rates
    tbl = build_table(sc)
    if args.load is not None:
        lam = _base_rates(sc) * args.load * throughput_margin(tbl, _base_rates(sc))
    traj = alternate(sc, lam, args.scheme, max_iters=args.iters, opts=_options(args),
                     sim_horizon=args.horizon or None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trajectory.csv").write_text(traj.to_csv())
    records.dump({"schema": records.TRAJECTORY_SCHEMA, "config": str(args.config),
                  "scheme": args.scheme, "arrival_rates": lam, "converged": traj.converged,
                  "cycle": traj.cycle, "error": traj.error, "columns": list(TRAJECTORY_COLUMNS),
                  "allocations": [s.allocation.to_dict()["x"] for s in traj.steps],
                  "psd": [s.psd for s in traj.steps]}, out / "trajectory.json")
    state = "converged" if traj.converged else "cycle" if traj.cycle else "not converged"
    print(f"{len(traj.steps)} iterations, {state} -> {out / 'trajectory.csv'}")
    if traj.error and not traj.steps:
        return _infeasible(InfeasibleError(traj.error), tbl, lam)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reusealloc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("allocate", help="solve one scheme and write the allocation record")
    a.add_argument("--config", required=True)
    a.add_argument("--scheme", default="conservative", choices=SCHEMES)
    a.add_argument("--out", required=True, help="output directory or .json file")
    a.add_argument("--tol", type=float)
    a.set_defaults(func=cmd_allocate)

    e = sub.add_parser("evaluate", help="recompute the delay report of a saved allocation")
    e.add_argument("--config", required=True)
    e.add_argument("--allocation", required=True)
    e.add_argument("--model", choices=("conservative", "refined"))
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="load sweep with analytic and simulated delays")
    s.add_argument("--config", required=True)
    s.add_argument("--scheme", default=",".join(SCHEMES), help="comma-separated schemes")
    s.add_argument("--loads", required=True, help="comma-separated load grid")
    s.add_argument("--load-unit", choices=("rho", "rate"), default="rho",
                   help="rho: fraction of the throughput margin; rate: mean packets/s per BTS")
    s.add_argument("--seeds", default="0")
    s.add_argument("--horizon", type=int, default=DEFAULT_HORIZON,
                   help="uniformized steps per simulation; 0 skips simulation")
    s.add_argument("--out", required=True)
    s.add_argument("--tol", type=float)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("powerctl", help="alternate allocation and power updates")
    c.add_argument("--config", required=True)
    c.add_argument("--scheme", default="conservative", choices=("conservative", "refined"))
    c.add_argument("--iters", type=int, default=20)
    c.add_argument("--load", type=float, help="scale traffic to this fraction of rho*")
    c.add_argument("--horizon", type=int, default=0, help="simulate each iterate (0: skip)")
    c.add_argument("--out", required=True)
    c.add_argument("--tol", type=float)
    c.set_defaults(func=cmd_powerctl)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
