"""Conservative allocation: every BTS is served at its worst-case rate, so the
cells are independent M/M/1 queues and the network delay is convex in x.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import patterns as pt
from .network import EfficiencyTable
from .simplex import (InfeasibleError, SolverError, SolverOptions, lp_feasible_point,
                      reduce_support, spg, throughput_margin)

log = logging.getLogger(__name__)

EPS_ZERO = 1e-6
STRICT_MARGIN = 1e-9
NEWTON_FLOOR = 1e-12  # face Newton steps below this are round-off


@dataclass(frozen=True, eq=False)
class Allocation:
    """Bandwidth fraction for every reuse pattern (indexed by bitmask)."""

    x: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        m = len(x)
        if m < 2 or m & (m - 1):
            raise ValueError(f"allocation length {m} is not 2**n")
        if np.any(x < -1e-9) or not np.all(np.isfinite(x)):
            raise ValueError("bandwidth fractions must be finite and >= 0")
        if abs(x.sum() - 1.0) > 1e-8:
            raise ValueError(f"fractions sum to {x.sum():.12g}, expected 1")
        if x[0] > 1e-9:
            raise ValueError("the empty pattern cannot carry spectrum")
        x = np.maximum(x, 0.0)
        x[0] = 0.0
        if abs(x.sum() - 1.0) > 1e-12:  # leave normalized input bit-exact for round trips
            x /= x.sum()
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return len(self.x).bit_length() - 1

    def __getitem__(self, bits: int) -> float:
        return float(self.x[bits])

    def support(self, eps: float = EPS_ZERO) -> list[int]:
        return support_patterns(self, eps)

    @classmethod
    def from_map(cls, n: int, fractions: dict[int, float]) -> "Allocation":
        x = np.zeros(1 << n)
        for bits, frac in fractions.items():
            x[int(bits)] = frac
        return cls(x)

    def to_dict(self) -> dict:
        return {"n": self.n, "x": {str(int(b)): float(self.x[b]) for b in np.nonzero(self.x)[0]}}

    @classmethod
    def from_dict(cls, d: dict) -> "Allocation":
        return cls.from_map(int(d["n"]), {int(k): float(v) for k, v in d["x"].items()})


@dataclass
class DelayReport:
    t: np.ndarray  # per-BTS sojourn time, s (nan for zero-traffic cells)
    T: float  # traffic-weighted network delay, s
    r: np.ndarray  # per-BTS service rate, packets/s
    model: str = "conservative"

    def to_dict(self) -> dict:
        return {"model": self.model, "T": float(self.T),
                "t": [None if not np.isfinite(v) else float(v) for v in self.t],
                "r": [float(v) for v in self.r]}


@dataclass
class Trace:
    objective: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    gap: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.objective)

    def to_dict(self) -> dict:
        return {"objective": list(map(float, self.objective)),
                "candidates": [list(map(int, c)) for c in self.candidates],
                "gap": list(map(float, self.gap))}


def full_reuse(n: int) -> Allocation:
    x = np.zeros(1 << n)
    x[pt.full(n)] = 1.0
    return Allocation(x)


def _as_rates(lam, n: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.shape != (n,):
        raise ValueError(f"expected {n} arrival rates, got {lam.shape}")
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("arrival rates must be finite and >= 0")
    return lam


def _xvec(x) -> np.ndarray:
    return x.x if isinstance(x, Allocation) else np.asarray(x, dtype=float)


def strict_margin(lam: np.ndarray) -> float:
    return STRICT_MARGIN * float(lam.max()) if lam.size and lam.max() > 0 else STRICT_MARGIN


def conservative_rates(x, tbl: EfficiencyTable) -> np.ndarray:
    return tbl.s @ _xvec(x)


def weighted_delay(t: np.ndarray, lam: np.ndarray) -> float:
    total = lam.sum()
    if total == 0:
        return 0.0
    pos = lam > 0
    return float(np.sum(lam[pos] * t[pos]) / total)


def conservative_delay(x, tbl: EfficiencyTable, lam) -> DelayReport:
    lam = _as_rates(lam, tbl.n)
    r = conservative_rates(x, tbl)
    bad = np.nonzero(r <= lam)[0]
    if len(bad):
        i = int(bad[0])
        raise InfeasibleError(f"cell {i + 1}: service rate {r[i]:.6g} <= arrival rate {lam[i]:.6g}",
                              cell=i)
    t = 1.0 / (r - lam)
    return DelayReport(t=t, T=weighted_delay(t, lam), r=r)


def p1_objective(x, tbl: EfficiencyTable, lam) -> float:
    """Network delay under the conservative model; ``inf`` if unstable."""
    lam = np.asarray(lam, dtype=float)
    u = conservative_rates(x, tbl) - lam
    if np.any(u <= 0):
        return np.inf
    total = lam.sum()
    return float(np.sum(lam / u) / total) if total > 0 else 0.0


def p1_gradient(x, tbl: EfficiencyTable, lam) -> np.ndarray:
    """Partial derivatives of the network delay with respect to every x_B."""
    lam = np.asarray(lam, dtype=float)
    u = conservative_rates(x, tbl) - lam
    return -(tbl.s.T @ (lam / u ** 2)) / lam.sum()


def support_patterns(x, eps: float = EPS_ZERO) -> list[int]:
    return [int(b) for b in np.nonzero(_xvec(x) > eps)[0]]


def find_feasible(tbl: EfficiencyTable, lam) -> Allocation:
    """A basic feasible allocation (at most n+1 patterns) with r_i > lambda_i.

    Raises :class:`InfeasibleError` carrying the throughput margin when the
    arrival rates lie outside the region.
    """
    n = tbl.n
    lam = _as_rates(lam, n)
    if not np.any(lam > 0):
        return full_reuse(n)
    rho = throughput_margin(tbl.s, lam)
    if rho <= 1.0 + 1e-9:
        raise InfeasibleError(f"arrival rates outside the throughput region (margin {rho:.6g})",
                              margin=rho)
    delta = strict_margin(lam)
    x = lp_feasible_point(tbl.s, 0.5 * (1.0 + rho) * lam + delta)
    if x is None or np.any(tbl.s @ x <= lam + delta):
        # within the LP's feasibility tolerance of the boundary
        raise InfeasibleError(f"no strictly feasible allocation found (margin {rho:.9g})",
                              margin=rho)
    x = reduce_support(tbl.s, x)
    return Allocation(x)


def initial_point(tbl: EfficiencyTable, lam) -> Allocation:
    """Full reuse when it is strictly feasible, else the LP point."""
    lam = _as_rates(lam, tbl.n)
    x = full_reuse(tbl.n)
    if np.all(conservative_rates(x, tbl) > lam + strict_margin(lam)):
        return x
    return find_feasible(tbl, lam)


def _polish(s: np.ndarray, lam: np.ndarray, y: np.ndarray, delta: float, tol: float,
            max_iter: int):
    """Active-set Newton on candidate columns ``s`` (n x k) from a feasible y.

    Works on the face of the current support with an equality-constrained
    Newton step and a ratio test; patterns whose gradient beats the face are
    priced in once the face is nearly optimal. Also stops, as converged, when
    the face Newton step is below ``NEWTON_FLOOR``. Returns
    ``(y, f, gap, iterations, converged)``, the gap being the relative
    Frank-Wolfe gap over all k columns.
    """
    total = lam.sum()

    def fval(yy):
        u = s @ yy - lam
        if np.any(u <= delta):
            return np.inf
        return float(np.sum(lam / u) / total)

    def rel_gap(yy, ff):
        gg = -(s.T @ (lam / (s @ yy - lam) ** 2)) / total
        return float(gg @ yy - gg.min()) / ff

    y = reduce_support(s, np.maximum(y, 0.0) / np.maximum(y, 0.0).sum())
    f = fval(y)
    if not np.isfinite(f):
        raise ValueError("polish started from an infeasible point")
    gap = np.inf
    it = -1
    for it in range(max_iter):
        u = s @ y - lam
        g = -(s.T @ (lam / u ** 2)) / total
        gap = float(g @ y - g.min()) / f
        if gap <= tol:
            return y, f, gap, it, True
        free = y > 0
        face = np.nonzero(free)[0]
        face_gap = float(g[face] @ y[face] - g[face].min()) / f
        entering = None
        if face_gap <= 0.1 * gap:
            out = np.nonzero(~free)[0]
            entering = int(out[np.argmin(g[out])])
            face = np.append(face, entering)
        sf = s[:, face]
        h = (sf.T * (2.0 * lam / u ** 3 / total)) @ sf
        k = len(face)
        # symmetric diagonal scaling keeps the KKT solve accurate near the boundary
        sc = 1.0 / np.sqrt(np.maximum(np.diag(h), 1e-300))
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = h * sc[:, None] * sc[None, :]
        kkt[:k, k] = kkt[k, :k] = sc
        rhs = np.append(-g[face] * sc, 0.0)
        d = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:k] * sc
        if entering is None and np.abs(d).max() <= NEWTON_FLOOR:
            # face optimum resolved to round-off; near the stability boundary
            # the relative gap can stall above tol for purely numerical reasons
            return y, f, gap, it, True
        direction = np.zeros_like(y)
        direction[face] = d
        gd = float(g @ direction)
        if gd >= 0 or (entering is not None and direction[entering] <= 0):
            # fall back to a Frank-Wolfe step toward the best vertex
            target = entering if entering is not None else int(face[np.argmin(g[face])])
            direction = -y.copy()
            direction[target] += 1.0
            gd = float(g @ direction)
            if gd >= 0:
                break
        neg = np.nonzero(direction < 0)[0]
        ratios = y[neg] / -direction[neg]
        t_max = float(ratios.min()) if len(neg) else np.inf
        t = min(1.0, t_max)
        while True:
            fn = fval(y + t * direction)
            if np.isfinite(fn) and fn <= f + 1e-4 * t * gd:
                break
            # below round-off in f the decrease is invisible; trust the gap instead
            if np.isfinite(fn) and abs(fn - f) <= 64 * np.finfo(float).eps * f \
                    and rel_gap(y + t * direction, fn) < gap:
                break
            t *= 0.5
            if t < 1e-18:
                break
        if t < 1e-18:
            # numerically flat: accept if the gap is already tiny
            break
        yn = y + t * direction
        if t == t_max:
            yn[neg[np.argmin(ratios)]] = 0.0
        yn = np.maximum(yn, 0.0)
        yn /= yn.sum()
        yn = reduce_support(s, yn)
        fn = fval(yn)
        if not np.isfinite(fn):
            break
        y, f = yn, fn
    gap = rel_gap(y, f)
    return y, f, gap, it + 1, gap <= tol


def _barrier_stages(tbl, lam, x0, opts: SolverOptions):
    """Log-barrier warm-up on the full simplex with a shrinking weight."""
    delta = strict_margin(lam)
    mask = np.ones(1 << tbl.n, dtype=bool)
    mask[0] = False
    x = x0
    f0 = p1_objective(x, tbl, lam)
    mu = opts.barrier_mu0 * f0
    for _ in range(opts.barrier_stages):
        def f(xx, mu=mu):
            u = tbl.s @ xx - lam - delta
            if np.any(u <= 0):
                return np.inf
            return float(np.sum(lam / (u + delta)) / lam.sum() - mu * np.sum(np.log(u)))

        def g(xx, mu=mu):
            u = tbl.s @ xx - lam - delta
            return -(tbl.s.T @ (lam / (u + delta) ** 2 / lam.sum() + mu / u))

        res = spg(f, g, x, tol=opts.stage_tol, max_iter=opts.max_iter, mask=mask, scale=f0)
        x = res.x
        mu *= opts.barrier_factor
    res = spg(lambda xx: p1_objective(xx, tbl, lam), lambda xx: p1_gradient(xx, tbl, lam),
              x, tol=opts.stage_tol, max_iter=opts.max_iter, mask=mask)
    return res.x


def _finish(tbl, lam, x: np.ndarray) -> tuple[Allocation, DelayReport]:
    alloc = Allocation(x)
    return alloc, conservative_delay(alloc, tbl, lam)


def solve_p1(tbl: EfficiencyTable, lam, opts: SolverOptions | None = None
             ) -> tuple[Allocation, DelayReport]:
    """Minimize the conservative network delay over all 2**n patterns."""
    opts = opts or SolverOptions()
    n = tbl.n
    lam = _as_rates(lam, n)
    if not np.any(lam > 0):
        return _finish(tbl, lam, full_reuse(n).x)
    x0 = initial_point(tbl, lam)
    x = _barrier_stages(tbl, lam, x0.x, opts)
    y, f, gap, its, ok = _polish(tbl.s[:, 1:], lam, x[1:], strict_margin(lam), opts.tol,
                                 opts.newton_max_iter)
    if not ok:
        raise SolverError(f"P1 polish stopped with relative KKT gap {gap:.3g} after {its} steps")
    return _finish(tbl, lam, np.concatenate([[0.0], y]))


def algorithm1(tbl: EfficiencyTable, lam, opts: SolverOptions | None = None
               ) -> tuple[Allocation, DelayReport, Trace]:
    """Candidate-set (column generation style) solver for the conservative problem.

    Each round solves the problem restricted to the candidate patterns, then
    adds the n patterns with the most negative partial derivatives (ties go
    to the lower bitmask). Stops when the candidate set stops growing.
    """
    opts = opts or SolverOptions()
    n = tbl.n
    lam = _as_rates(lam, n)
    trace = Trace()
    if not np.any(lam > 0):
        alloc, rep = _finish(tbl, lam, full_reuse(n).x)
        trace.objective.append(0.0)
        trace.candidates.append([pt.full(n)])
        trace.gap.append(0.0)
        return alloc, rep, trace
    delta = strict_margin(lam)
    x_prev = initial_point(tbl, lam).x.copy()
    cand = set(support_patterns(x_prev, 0.0))
    seen: set[int] = set()
    codes = np.arange(1 << n)
    x = x_prev
    while not cand <= seen:
        if trace.iterations >= opts.max_iter:
            raise SolverError("algorithm 1 exceeded its iteration cap")
        seen = set(cand)
        idx = np.array(sorted(cand))
        y, f, gap, its, ok = _polish(tbl.s[:, idx], lam, x_prev[idx], delta, opts.tol,
                                     opts.newton_max_iter)
        if not ok:
            raise SolverError(f"restricted solve stopped with relative gap {gap:.3g}")
        x = np.zeros(1 << n)
        x[idx] = y
        g = p1_gradient(x, tbl, lam)
        order = np.lexsort((codes[1:], g[1:])) + 1
        cand = set(int(b) for b in order[:n]) | seen
        trace.objective.append(f)
        trace.candidates.append(idx.tolist())
        trace.gap.append(float(g @ x - g[1:].min()) / f)
        x_prev = x
    return (*_finish(tbl, lam, x), trace)
