"""Shared numerics on the probability simplex: projection, spectral projected
gradient, support reduction and the LP feasibility routines behind the
throughput-region tools.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linprog

log = logging.getLogger(__name__)


class InfeasibleError(RuntimeError):
    """No allocation serves the offered traffic.

    ``margin`` is the largest factor by which the arrival rates could be
    scaled while staying inside the throughput region (so it is <= 1 here);
    ``cell`` names a violating BTS when the error comes from evaluating a
    specific allocation.
    """

    def __init__(self, message: str, margin: float | None = None, cell: int | None = None):
        super().__init__(message)
        self.margin = margin
        self.cell = cell


class SolverError(RuntimeError):
    """A descent failed to meet its stopping rule within the iteration cap."""


@dataclass
class SolverOptions:
    tol: float = 1e-8  # relative Frank-Wolfe gap
    max_iter: int = 5000
    newton_max_iter: int = 500
    barrier_mu0: float = 1e-3  # relative to the starting objective
    barrier_factor: float = 0.1
    barrier_stages: int = 3
    stage_tol: float = 1e-5
    restarts: int = 5
    seed: int = 0
    fd_rel_step: float = 1e-6
    fd_min_step: float = 1e-9
    extra: dict = field(default_factory=dict)


def project_simplex(y: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum x = 1}``.

    With ``mask`` the projection is onto the face where unmasked entries are 0.
    """
    if mask is not None:
        out = np.zeros_like(y, dtype=float)
        out[mask] = project_simplex(y[mask])
        return out
    y = y - y.max()  # shift-invariant; keeps huge gradient steps from cancelling to 0
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(y) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(y - theta, 0.0)


def fw_gap(g: np.ndarray, x: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Frank-Wolfe duality gap ``g.x - min g``; zero exactly at simplex KKT points."""
    gm = g if mask is None else g[mask]
    return float(g @ x - gm.min())


@dataclass
class SPGResult:
    x: np.ndarray
    fun: float
    gap: float
    iterations: int
    converged: bool
    stalled: bool
    history: list


def spg(fun: Callable[[np.ndarray], float], grad: Callable[[np.ndarray], np.ndarray],
        x0: np.ndarray, *, tol: float, max_iter: int, mask: np.ndarray | None = None,
        memory: int = 10, scale: float | None = None) -> SPGResult:
    """Nonmonotone spectral projected gradient on the simplex.

    ``fun`` returns ``inf`` outside its domain; the line search backtracks
    until the trial point is finite and satisfies the nonmonotone Armijo test.
    Stops once the Frank-Wolfe gap falls below ``tol * scale`` (``scale``
    defaults to ``|f|`` at the current iterate).
    """
    x = x0.astype(float).copy()
    f = fun(x)
    if not np.isfinite(f):
        raise ValueError("starting point is outside the domain")
    g = grad(x)
    hist = [f]
    d = project_simplex(x - g, mask) - x
    alpha = 1.0 / max(np.abs(d).max(), 1e-300)
    gap = fw_gap(g, x, mask)
    stalled = False
    it = 0
    for it in range(1, max_iter + 1):
        if gap <= tol * (scale or max(abs(f), 1e-300)):
            return SPGResult(x, f, gap, it - 1, True, False, hist)
        d = project_simplex(x - alpha * g, mask) - x
        gd = float(g @ d)
        if gd >= 0:
            d = project_simplex(x - g, mask) - x
            gd = float(g @ d)
        fref = max(hist[-memory:])
        step = 1.0
        while True:
            xn = x + step * d
            fn = fun(xn)
            if np.isfinite(fn) and fn <= fref + 1e-4 * step * gd:
                break
            step *= 0.5
            if step < 1e-20:
                stalled = True
                break
        if stalled:
            break
        gn = grad(xn)
        s, yv = xn - x, gn - g
        sy = float(s @ yv)
        alpha = float(s @ s) / sy if sy > 0 else 1e10 * alpha
        alpha = min(max(alpha, 1e-30), 1e30)
        x, f, g = xn, fn, gn
        hist.append(f)
        gap = fw_gap(g, x, mask)
    converged = gap <= tol * (scale or max(abs(f), 1e-300))
    return SPGResult(x, f, gap, it, converged, stalled, hist)


def reduce_support(cols: np.ndarray, y: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    """Carathéodory reduction: same ``cols @ y`` and sum, fewer positive weights.

    Repeatedly moves along a null vector of ``[cols; 1]`` restricted to the
    support until some weight reaches zero. The result has affinely
    independent support columns, hence at most ``rows + 1`` nonzeros.
    """
    y = y.copy()
    while True:
        sup = np.nonzero(y > atol)[0]
        y[y <= atol] = 0.0
        a = np.vstack([cols[:, sup], np.ones(len(sup))])
        scale = np.maximum(np.abs(a).max(axis=1, keepdims=True), 1e-300)
        a = a / scale
        if len(sup) <= 1:
            return y
        _, sv, vt = np.linalg.svd(a)
        rank = int(np.sum(sv > sv[0] * 1e-11)) if len(sv) else 0
        if rank >= len(sup):
            return y
        v = vt[-1]
        if not np.any(v < 0):
            v = -v
        neg = np.nonzero(v < 0)[0]
        ratios = y[sup][neg] / -v[neg]
        hit = neg[np.argmin(ratios)]
        y[sup] += ratios.min() * v
        y[sup[hit]] = 0.0
        y = np.maximum(y, 0.0)
        y /= y.sum()


def _lp_simplex_bounds(m: int, allowed: np.ndarray | None):
    # the empty pattern (index 0) never carries spectrum
    return [(0.0, None) if k and (allowed is None or allowed[k]) else (0.0, 0.0)
            for k in range(m)]


def lp_feasible_point(s: np.ndarray, demand: np.ndarray, allowed: np.ndarray | None = None,
                      method: str = "highs-ds") -> np.ndarray | None:
    """A basic solution of ``s @ x >= demand`` on the simplex, or None."""
    n, m = s.shape
    res = linprog(np.zeros(m), A_ub=-s, b_ub=-demand, A_eq=np.ones((1, m)), b_eq=[1.0],
                  bounds=_lp_simplex_bounds(m, allowed), method=method)
    if res.status != 0:
        return None
    x = np.maximum(res.x, 0.0)
    return x / x.sum()


def throughput_margin(s: np.ndarray, lam: np.ndarray, tol: float = 1e-9) -> float:
    """Largest rho with ``rho * lam`` in the throughput region, by bisection."""
    lam = np.asarray(lam, dtype=float)
    pos = lam > 0
    if not np.any(pos):
        raise ValueError("throughput margin needs a nonzero arrival vector")
    sub_s, sub_l = s[pos], lam[pos]
    hi = float(np.min(sub_s.max(axis=1) / sub_l))
    if lp_feasible_point(sub_s, hi * sub_l) is not None:
        return hi
    lo = 0.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if lp_feasible_point(sub_s, mid * sub_l) is not None:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
