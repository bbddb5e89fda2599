"""Alternating spectrum and power updates under a per-BTS total power budget.

Each round solves for the allocation with the efficiencies fixed, then lets
every BTS spread its whole budget uniformly over the bandwidth it was given
and rebuilds the efficiency table. Nothing guarantees this converges, so the
loop reports convergence or a revisited allocation instead of assuming it.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import patterns as pt
from .conservative import Allocation, DelayReport, _as_rates, conservative_delay, solve_p1
from .network import EfficiencyTable, RateFn, Scenario, build_table, shannon_rate
from .queuesim import simulate
from .refined import refined_delay
from .refined_opt import solve_p2
from .simplex import InfeasibleError, SolverError, SolverOptions

log = logging.getLogger(__name__)

CONVERGE_TV = 1e-4
CYCLE_TV = 1e-6
SCHEMES = ("conservative", "refined")


def total_variation(a, b) -> float:
    av = a.x if isinstance(a, Allocation) else np.asarray(a)
    bv = b.x if isinstance(b, Allocation) else np.asarray(b)
    return 0.5 * float(np.abs(av - bv).sum())


def default_budgets(sc: Scenario) -> np.ndarray:
    """Budgets that reproduce the scenario's PSDs when a BTS owns the full band."""
    return sc.tx_psd * sc.bandwidth_w


def bandwidth_shares(x, n: int) -> np.ndarray:
    """``sum_{B contains i} x_B`` for every BTS."""
    xv = x.x if isinstance(x, Allocation) else np.asarray(x, dtype=float)
    return pt.membership(n) @ xv


def power_psd(x, sc: Scenario, budgets=None, lam=None) -> np.ndarray:
    """Per-BTS PSD after spreading each budget over the BTS's allocated bandwidth."""
    n = sc.n
    budgets = default_budgets(sc) if budgets is None else np.broadcast_to(
        np.asarray(budgets, dtype=float), (n,))
    lam = sc.arrival_rates if lam is None else _as_rates(lam, n)
    w = sc.bandwidth_w * bandwidth_shares(x, n)
    starved = (w <= 0) & (lam > 0)
    if np.any(starved):
        raise ValueError(f"BTS {np.nonzero(starved)[0].tolist()} carry traffic but no bandwidth")
    psd = np.zeros(n)
    on = w > 0
    psd[on] = budgets[on] / w[on]
    return psd


def update_efficiencies(x, sc: Scenario, budgets=None, lam=None,
                        rate_fn: RateFn = shannon_rate) -> EfficiencyTable:
    """Efficiency table with every BTS's budget spread over its own bandwidth."""
    return build_table(sc.with_psd(power_psd(x, sc, budgets, lam)), rate_fn)


@dataclass
class PowerStep:
    iteration: int
    allocation: Allocation
    report: DelayReport  # allocation evaluated on the table it was solved with
    realized: DelayReport | None  # same allocation once its own power update is applied
    psd: np.ndarray
    tv: float  # change from the previous allocation
    sim_delay: float = float("nan")
    sim_stderr: float = float("nan")


@dataclass
class PowerTrajectory:
    scheme: str
    steps: list = field(default_factory=list)
    converged: bool = False
    cycle: bool = False
    error: str = ""

    def delays(self) -> np.ndarray:
        return np.array([s.report.T for s in self.steps])

    def csv_rows(self) -> list[dict]:
        rows = []
        for s in self.steps:
            rows.append({"iteration": s.iteration, "scheme": self.scheme,
                         "analytic_delay": s.report.T,
                         "realized_delay": s.realized.T if s.realized else "",
                         "sim_delay": _blank(s.sim_delay), "sim_stderr": _blank(s.sim_stderr),
                         "tv": _blank(s.tv),
                         "converged": int(self.converged), "cycle": int(self.cycle),
                         "status": self.error or "ok"})
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(TRAJECTORY_COLUMNS), lineterminator="\n")
        w.writeheader()
        w.writerows(self.csv_rows())
        return buf.getvalue()


def _blank(v: float):
    return "" if np.isnan(v) else v


TRAJECTORY_COLUMNS = ("iteration", "scheme", "analytic_delay", "realized_delay", "sim_delay",
                      "sim_stderr", "tv", "converged", "cycle", "status")


def _solve(scheme: str, tbl: EfficiencyTable, lam, opts: SolverOptions):
    if scheme == "conservative":
        return solve_p1(tbl, lam, opts)
    x, rep, _ = solve_p2(tbl, lam, opts)
    return x, rep


def _evaluate(scheme: str, x: Allocation, tbl: EfficiencyTable, lam) -> DelayReport | None:
    try:
        return conservative_delay(x, tbl, lam) if scheme == "conservative" \
            else refined_delay(x, tbl, lam)
    except InfeasibleError:
        return None


def alternate(sc: Scenario, lam=None, scheme: str = "conservative", max_iters: int = 20,
              budgets=None, opts: SolverOptions | None = None, sim_horizon: int | None = None,
              seed: int = 0, rate_fn: RateFn = shannon_rate) -> PowerTrajectory:
    """Alternate allocation solves and power updates for up to ``max_iters`` rounds.

    Iterate k solves on table ``T_k``; ``T_0`` is the scenario's own table
    and ``T_{k+1}`` spreads the budgets over the bandwidth of iterate k. The
    loop stops when the allocation moves less than ``CONVERGE_TV`` in total
    variation, when the power update leaves the PSDs unchanged, or when an
    earlier iterate is revisited within ``CYCLE_TV``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    opts = opts or SolverOptions()
    n = sc.n
    lam = sc.arrival_rates if lam is None else _as_rates(lam, n)
    budgets = default_budgets(sc) if budgets is None else budgets
    traj = PowerTrajectory(scheme)
    tbl = build_table(sc, rate_fn)
    psd = sc.tx_psd.copy()
    history: list[np.ndarray] = []
    for k in range(max_iters):
        try:
            x, rep = _solve(scheme, tbl, lam, opts)
        except (InfeasibleError, SolverError) as exc:
            traj.error = f"iteration {k}: {exc}"
            log.warning("power alternation stopped: %s", traj.error)
            break
        new_psd = power_psd(x, sc, budgets, lam)
        nxt = build_table(sc.with_psd(new_psd), rate_fn)
        tv = total_variation(x, history[-1]) if history else float("nan")
        step = PowerStep(k, x, rep, _evaluate(scheme, x, nxt, lam), psd, tv)
        if sim_horizon:
            res = simulate(x, tbl, lam, sim_horizon, seed=seed + k)
            step.sim_delay, step.sim_stderr = res.pooled_mean, res.pooled_stderr
        traj.steps.append(step)
        if history and tv < CONVERGE_TV:
            traj.converged = True
            break
        if any(total_variation(x, h) < CYCLE_TV for h in history[:-1]):
            traj.cycle = True
            break
        if np.allclose(new_psd, psd, rtol=1e-12, atol=0.0):
            traj.converged = True  # fixed point: the next solve sees the same table
            break
        history.append(x.x.copy())
        tbl, psd = nxt, new_psd
    return traj
