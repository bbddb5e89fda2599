"""First- and second-degree delay bounds for coupled-processor queues.

The second-degree bounds freeze every other BTS at its worst (upper bound) or
best (lower bound) service rate, which makes the other BTSs independent
on/off sources with product-form activity probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import patterns as pt
from .conservative import _as_rates
from .network import EfficiencyTable
from .refined import check_stability, delays_from_chain, lumped_generator, refined_rates, steady_state


@dataclass
class BoundsReport:
    first_upper: np.ndarray
    first_lower: np.ndarray
    second_upper: np.ndarray
    second_lower: np.ndarray
    refined: np.ndarray

    def ordered(self, slack: float = 0.0) -> np.ndarray:
        """Per-cell flag for lower1 <= lower2 < refined < upper2 <= upper1."""
        ok = (self.first_lower <= self.second_lower * (1 + 1e-12)) \
            & (self.second_upper <= self.first_upper * (1 + 1e-12))
        ok &= self.second_lower + slack < self.refined
        ok &= self.refined + slack < self.second_upper
        return ok

    def to_dict(self) -> dict:
        def conv(a):
            return [None if np.isnan(v) else (float(v) if np.isfinite(v) else "inf") for v in a]
        return {k: conv(getattr(self, k)) for k in
                ("first_upper", "first_lower", "second_upper", "second_lower", "refined")}


def _activity(p: np.ndarray, i: int) -> np.ndarray:
    """Probability of each active set A containing i, others independent with prob p."""
    n = len(p)
    mem = pt.membership(n)
    prob = np.ones(1 << n)
    for j in range(n):
        if j != i:
            prob *= np.where(mem[j], p[j], 1.0 - p[j])
    prob[~mem[i]] = 0.0
    return prob


def _setup(x, tbl, lam):
    lam = _as_rates(lam, tbl.n)
    r = refined_rates(x, tbl)
    check_stability(r, lam)
    return lam, r


def second_degree_upper(x, tbl: EfficiencyTable, lam, rates: np.ndarray | None = None) -> np.ndarray:
    lam, r = _setup(x, tbl, lam) if rates is None else (_as_rates(lam, tbl.n), rates)
    n = tbl.n
    p_busy = lam / r[:, pt.full(n)]
    out = np.empty(n)
    for i in range(n):
        w = _activity(p_busy, i)
        a = w > 0
        gap = r[i, a] - lam[i]
        out[i] = np.inf if np.any(gap <= 0) else float(np.sum(w[a] / gap))
    return out


def second_degree_lower(x, tbl: EfficiencyTable, lam, rates: np.ndarray | None = None) -> np.ndarray:
    lam, r = _setup(x, tbl, lam) if rates is None else (_as_rates(lam, tbl.n), rates)
    n = tbl.n
    alone = r[np.arange(n), 1 << np.arange(n)]
    p_busy = lam / alone
    out = np.empty(n)
    for i in range(n):
        mean_rate = float(_activity(p_busy, i) @ r[i])
        denom = mean_rate - lam[i]
        assert denom > 0, "average rate cannot fall below the worst-case rate"
        out[i] = 1.0 / denom
    return out


def first_degree_bounds(x, tbl: EfficiencyTable, lam, rates: np.ndarray | None = None):
    """``(upper, lower)`` from the worst-case and interference-free rates."""
    lam, r = _setup(x, tbl, lam) if rates is None else (_as_rates(lam, tbl.n), rates)
    n = tbl.n
    upper = 1.0 / (r[:, pt.full(n)] - lam)
    lower = 1.0 / (r[np.arange(n), 1 << np.arange(n)] - lam)
    return upper, lower


def bounds_report(x, tbl: EfficiencyTable, lam) -> BoundsReport:
    lam, r = _setup(x, tbl, lam)
    chain = lumped_generator(x, tbl, lam, rates=r)
    t = delays_from_chain(r, lam, steady_state(chain))
    up1, lo1 = first_degree_bounds(x, tbl, lam, rates=r)
    return BoundsReport(first_upper=up1, first_lower=lo1,
                        second_upper=second_degree_upper(x, tbl, lam, rates=r),
                        second_lower=second_degree_lower(x, tbl, lam, rates=r),
                        refined=t)
