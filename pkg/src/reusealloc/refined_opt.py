"""Refined allocation: minimize the lumped-chain delay approximation.

The objective may be non-convex, so the descent is restarted from several
points and the best local minimizer is kept.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import patterns as pt
from .conservative import (Allocation, DelayReport, _as_rates, full_reuse, solve_p1,
                           strict_margin, support_patterns)
from .network import EfficiencyTable
from .refined import refined_delay, refined_rates
from .simplex import InfeasibleError, SolverOptions, spg

log = logging.getLogger(__name__)

PENALTY = 1e12
SUPPORT_SLACK = 3


class P2Eval(NamedTuple):
    value: float
    gradient: np.ndarray
    feasible: bool


@dataclass
class P2Trace:
    starts: list = field(default_factory=list)  # start labels
    start_objectives: list = field(default_factory=list)
    end_objectives: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    best: int = -1
    agreement: float = 0.0  # fraction of restarts within 1e-6 of the best
    stalled: bool = False
    support_warning: bool = False

    def to_dict(self) -> dict:
        return {"starts": self.starts,
                "start_objectives": list(map(float, self.start_objectives)),
                "end_objectives": list(map(float, self.end_objectives)),
                "iterations": list(map(int, self.iterations)),
                "converged": list(map(bool, self.converged)),
                "best": self.best, "agreement": self.agreement,
                "stalled": self.stalled, "support_warning": self.support_warning}


class _Model:
    """Batched evaluator of the refined objective for one (table, lambda)."""

    def __init__(self, tbl: EfficiencyTable, lam: np.ndarray):
        self.tbl = tbl
        self.n = n = tbl.n
        self.m = m = 1 << n
        self.lam = lam
        self.total = lam.sum()
        self.delta = strict_margin(lam)
        busy = pt.from_members(np.nonzero(lam > 0)[0])
        self.reach = np.array(list(pt.subsets(busy)))
        self.busy = np.nonzero(lam > 0)[0]
        codes = np.arange(m)
        # d r[:, A] / d x_B = s[:, B & A], restricted to reachable A
        self.dR = tbl.s[:, (codes[:, None] & self.reach[None, :])].transpose(1, 0, 2)
        k = len(self.reach)
        pos = {int(a): j for j, a in enumerate(self.reach)}
        self.up = []  # (cell, from_idx, to_idx)
        for i in self.busy:
            bit = 1 << int(i)
            frm = [pos[int(a)] for a in self.reach if not a & bit]
            to = [pos[int(a) | bit] for a in self.reach if not a & bit]
            self.up.append((int(i), np.array(frm), np.array(to)))
        self.k = k
        self.full = pt.full(n)

    def rates(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("b,bnk->nk", x, self.dR)

    def worst(self, x: np.ndarray) -> np.ndarray:
        return self.tbl.s @ x  # r[:, N] equals the conservative rate

    def values(self, R: np.ndarray, worst: np.ndarray) -> np.ndarray:
        """Objective for a stack of rate arrays ``R`` of shape (batch, n, k)."""
        lam = self.lam
        batch = R.shape[0]
        out = np.full(batch, np.inf)
        ok = np.all(worst - lam[None, :] > self.delta, axis=1)
        if not np.any(ok):
            return out
        R = R[ok]
        b = R.shape[0]
        k = self.k
        A = np.zeros((b, k, k))
        # A = Q^T: A[:, to, from] = rate(from -> to)
        for i, frm, to in self.up:
            A[:, to, frm] = lam[i]
            A[:, frm, to] = R[:, i, to] - lam[i]
        diag = -A.sum(axis=1)
        idx = np.arange(k)
        A[:, idx, idx] = diag
        A[:, -1, :] = 1.0
        rhs = np.zeros((b, k, 1))
        rhs[:, -1, 0] = 1.0
        p = np.linalg.solve(A, rhs)[..., 0]
        p = np.maximum(p, 0.0)
        val = np.zeros(b)
        for i, frm, to in self.up:
            ri = R[:, i, to]
            val += np.sum(p[:, to] * ri / (ri - lam[i]), axis=1)
        # sum_i lam_i t_i = sum_i lbar_i
        out[ok] = val / self.total
        return out

    def value(self, x: np.ndarray) -> float:
        return float(self.values(self.rates(x)[None], self.worst(x)[None])[0])

    def gradient(self, x: np.ndarray, opts: SolverOptions, mask: np.ndarray) -> np.ndarray:
        """Central differences per coordinate, projected on the simplex tangent."""
        coords = np.nonzero(mask)[0]
        h = np.maximum(opts.fd_rel_step * np.abs(x[coords]), opts.fd_min_step)
        R0 = self.rates(x)
        w0 = self.worst(x)
        dRc = self.dR[coords]
        dW = self.tbl.s[:, coords].T
        hh = h[:, None, None]
        Rs = np.concatenate([R0[None] + hh * dRc, R0[None] - hh * dRc])
        Ws = np.concatenate([w0[None] + h[:, None] * dW, w0[None] - h[:, None] * dW])
        vals = np.empty(len(Rs))
        chunk = max(1, (1 << 23) // (self.k * self.k))
        for s0 in range(0, len(Rs), chunk):
            vals[s0:s0 + chunk] = self.values(Rs[s0:s0 + chunk], Ws[s0:s0 + chunk])
        fp, fm = vals[:len(coords)], vals[len(coords):]
        f0 = self.value(x)
        g = np.where(np.isfinite(fm), (fp - fm) / (2 * h), (fp - f0) / h)
        out = np.zeros_like(x)
        out[coords] = g - g.mean()
        return out


def _mask(n: int) -> np.ndarray:
    mask = np.ones(1 << n, dtype=bool)
    mask[0] = False
    return mask


def p2_objective_and_gradient(x, tbl: EfficiencyTable, lam, opts: SolverOptions | None = None
                              ) -> P2Eval:
    """Refined network delay and its finite-difference gradient.

    Outside the stability region the value is a large finite penalty growing
    with the violation, its gradient points back toward feasibility, and
    ``feasible`` is False.
    """
    opts = opts or SolverOptions()
    lam = _as_rates(lam, tbl.n)
    xv = x.x if isinstance(x, Allocation) else np.asarray(x, dtype=float)
    model = _Model(tbl, lam)
    f = model.value(xv)
    mask = _mask(tbl.n)
    if np.isfinite(f):
        return P2Eval(f, model.gradient(xv, opts, mask), True)
    worst = model.worst(xv)
    viol = np.maximum(lam + model.delta - worst, 0.0)
    log.warning("refined objective evaluated outside the stability region")
    g = np.zeros_like(xv)
    g[mask] = -(tbl.s[:, mask].T @ (viol > 0)) * PENALTY
    g[mask] -= g[mask].mean()
    return P2Eval(PENALTY * (1.0 + float(viol.sum())), g, False)


def p2_objective(x, tbl: EfficiencyTable, lam) -> float:
    """Refined network delay, ``inf`` outside the stability region."""
    lam = _as_rates(lam, tbl.n)
    xv = x.x if isinstance(x, Allocation) else np.asarray(x, dtype=float)
    return _Model(tbl, lam).value(xv)


def _descend(model: _Model, x0: np.ndarray, opts: SolverOptions, tol: float):
    mask = _mask(model.n)
    x = x0
    f0 = model.value(x)
    mu = opts.barrier_mu0 * f0
    lam = model.lam
    iters = 0
    for _ in range(opts.barrier_stages):
        def fun(xx, mu=mu):
            v = model.value(xx)
            return v - mu * float(np.sum(np.log(model.worst(xx) - lam - model.delta))) \
                if np.isfinite(v) else np.inf

        def grad(xx, mu=mu):
            g = model.gradient(xx, opts, mask)
            u = model.worst(xx) - lam - model.delta
            gb = -(model.tbl.s.T @ (mu / u))
            gb[~mask] = 0.0
            gb[mask] -= gb[mask].mean()
            return g + gb

        res = spg(fun, grad, x, tol=max(opts.stage_tol, tol), max_iter=opts.max_iter // 4 or 1,
                  mask=mask, scale=f0)
        x = res.x
        iters += res.iterations
        mu *= opts.barrier_factor
    res = spg(model.value, lambda xx: model.gradient(xx, opts, mask), x, tol=tol,
              max_iter=opts.max_iter, mask=mask)
    iters += res.iterations
    return res.x, res.fun, iters, res.converged, res.stalled


def _starts(tbl: EfficiencyTable, lam: np.ndarray, model: _Model, opts: SolverOptions):
    from .baselines import solve_orthogonal  # local: baselines builds on this module's peers

    n = tbl.n
    out = []
    fr = full_reuse(n).x
    if np.isfinite(model.value(fr)):
        out.append(("full-reuse", fr))
    x1, _ = solve_p1(tbl, lam, opts)
    out.append(("conservative", x1.x))
    try:
        xo, _ = solve_orthogonal(tbl, lam, opts)
        if np.isfinite(model.value(xo.x)):
            out.append(("orthogonal", xo.x))
    except InfeasibleError:
        pass
    rng = np.random.default_rng(opts.seed)
    n_random = max(0, opts.restarts - len(out))
    for k in range(n_random):
        d = np.zeros(1 << n)
        d[1:] = rng.dirichlet(np.ones((1 << n) - 1))
        theta = 1.0
        while theta > 1e-6:
            cand = (1 - theta) * x1.x + theta * d
            if np.isfinite(model.value(cand)):
                out.append((f"random-{k}", cand))
                break
            theta *= 0.5
    return out[:max(opts.restarts, 1)]


def solve_p2(tbl: EfficiencyTable, lam, opts: SolverOptions | None = None,
             tol: float = 1e-6) -> tuple[Allocation, DelayReport, P2Trace]:
    """Best refined allocation over the restart set.

    Default starts: full reuse, the conservative optimum, the optimal
    orthogonal allocation and random Dirichlet points pulled toward the
    conservative optimum until stable.
    """
    opts = opts or SolverOptions()
    n = tbl.n
    lam = _as_rates(lam, n)
    trace = P2Trace()
    if n == 1 or not np.any(lam > 0):
        x = full_reuse(n)
        rep = refined_delay(x, tbl, lam)
        trace.starts.append("full-reuse")
        trace.start_objectives.append(rep.T)
        trace.end_objectives.append(rep.T)
        trace.iterations.append(0)
        trace.converged.append(True)
        trace.best, trace.agreement = 0, 1.0
        return x, rep, trace
    model = _Model(tbl, lam)
    starts = _starts(tbl, lam, model, opts)  # raises InfeasibleError via P1 if outside region
    best_x, best_f = None, np.inf
    for label, x0 in starts:
        f0 = model.value(x0)
        x, f, its, conv, stalled = _descend(model, x0, opts, tol)
        if f > f0:
            x, f = x0, f0
        trace.starts.append(label)
        trace.start_objectives.append(f0)
        trace.end_objectives.append(f)
        trace.iterations.append(its)
        trace.converged.append(conv)
        trace.stalled |= stalled
        if f < best_f:
            best_x, best_f = x, f
            trace.best = len(trace.starts) - 1
    ends = np.array(trace.end_objectives)
    trace.agreement = float(np.mean(np.abs(ends - best_f) <= 1e-6 * best_f))
    alloc = Allocation(best_x)
    if len(support_patterns(alloc)) > n + SUPPORT_SLACK:
        trace.support_warning = True
        log.warning("refined allocation uses %d patterns (n=%d)", len(support_patterns(alloc)), n)
    return alloc, refined_delay(alloc, tbl, lam), trace
