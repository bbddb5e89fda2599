"""Reference allocations (full reuse, optimal orthogonal) and throughput-region tools."""

from __future__ import annotations

import numpy as np

from .conservative import (Allocation, DelayReport, _as_rates, _polish, conservative_delay,
                           full_reuse, strict_margin)
from .network import EfficiencyTable
from .simplex import InfeasibleError, SolverError, SolverOptions
from .simplex import throughput_margin as _margin

__all__ = ["full_reuse", "solve_orthogonal", "throughput_margin", "orthogonal_load"]


def throughput_margin(tbl: EfficiencyTable, lam) -> float:
    """Largest rho such that ``rho * lam`` lies in the throughput region.

    ``rho > 1`` means the arrival rates are strictly inside the region.
    """
    lam = _as_rates(lam, tbl.n)
    return _margin(tbl.s, lam)


def orthogonal_load(tbl: EfficiencyTable, lam) -> float:
    """``sum_i lam_i / s[i, {i}]``; orthogonal allocations are feasible iff < 1."""
    lam = _as_rates(lam, tbl.n)
    n = tbl.n
    return float(np.sum(lam / tbl.s[np.arange(n), 1 << np.arange(n)]))


def solve_orthogonal(tbl: EfficiencyTable, lam, opts: SolverOptions | None = None
                     ) -> tuple[Allocation, DelayReport]:
    """Best allocation that gives each BTS an exclusive band."""
    opts = opts or SolverOptions()
    n = tbl.n
    lam = _as_rates(lam, n)
    load = orthogonal_load(tbl, lam)
    if load >= 1.0:
        raise InfeasibleError(f"orthogonal allocation infeasible: load {load:.6g} >= 1 "
                              f"(gap {load - 1.0:.3g})", margin=1.0 / load)
    single = 1 << np.arange(n)
    alone = tbl.s[np.arange(n), single]
    y0 = lam / alone + (1.0 - load) / n
    if not np.any(lam > 0):
        y = y0
    else:
        y, f, gap, its, ok = _polish(tbl.s[:, single], lam, y0, strict_margin(lam), opts.tol,
                                     opts.newton_max_iter)
        if not ok:
            raise SolverError(f"orthogonal solve stopped with relative gap {gap:.3g}")
    x = np.zeros(1 << n)
    x[single] = y
    alloc = Allocation(x)
    return alloc, conservative_delay(alloc, tbl, lam)
