"""Simulation of the coupled downlink queues and an exact truncated-chain solver.

The simulator runs the uniformized chain over queue-length vectors: every
step is an arrival at some cell, a service completion, or a self-loop, all
drawn against the common rate ``sum(lam) + sum_i max_A r[i, A]``. Holding
times between steps are exponential with that rate, so the sampled path is
an exact realization of the continuous-time process and sojourn times can
be read off directly. Queues are FIFO and include the packet in service.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from .conservative import Allocation, _as_rates
from .network import EfficiencyTable
from .refined import refined_rates

__all__ = ["SimResult", "CoupledResult", "TruncationError", "simulate", "simulate_coupled",
           "utilization", "exact_small_delay", "exact_small", "ExactSolution", "auto_cap", "DEFAULT_WARMUP", "DEFAULT_BATCHES"]

DEFAULT_WARMUP = 0.1
DEFAULT_BATCHES = 20
HIST_LEN = 4096  # longer queues land in the last bin
MAX_EXACT_BTS = 3
TRUNCATION_MASS = 1e-8
MAX_EXACT_STATES = 2_000_000


class TruncationError(ValueError):
    """The truncated chain puts too much mass on the boundary; raise ``cap``."""


@dataclass
class SimResult:
    mean_sojourn: np.ndarray  # per cell, seconds; nan where nothing was served
    stderr: np.ndarray
    pooled_mean: float
    pooled_stderr: float
    utilization: np.ndarray
    cdf: np.ndarray  # (n, L): P(queue length <= l), time-averaged
    pooled_cdf: np.ndarray
    served: np.ndarray
    horizon: int
    seed: int
    unstable: bool
    sim_time: float = 0.0

    @property
    def n(self) -> int:
        return len(self.mean_sojourn)

    def to_dict(self) -> dict:
        def f(v):
            v = float(v)
            return None if math.isnan(v) else v
        return {"schema": "reusealloc.simresult/1",
                "mean_sojourn": [f(v) for v in self.mean_sojourn],
                "stderr": [f(v) for v in self.stderr],
                "pooled_mean": f(self.pooled_mean), "pooled_stderr": f(self.pooled_stderr),
                "utilization": [float(v) for v in self.utilization],
                "cdf": self.cdf.tolist(), "pooled_cdf": self.pooled_cdf.tolist(),
                "served": [int(v) for v in self.served], "horizon": int(self.horizon),
                "seed": int(self.seed), "unstable": bool(self.unstable),
                "sim_time": float(self.sim_time)}

    def csv_rows(self, load: float | None = None) -> list[dict]:
        return [{"load": "" if load is None else load, "cell": i + 1,
                 "mean": self.mean_sojourn[i], "stderr": self.stderr[i],
                 "utilization": self.utilization[i]} for i in range(self.n)]

    def to_csv(self, load: float | None = None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["load", "cell", "mean", "stderr", "utilization"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(self.csv_rows(load))
        return buf.getvalue()


@dataclass
class CoupledResult:
    events: int
    violations: int  # event times with l_i > frozen l_i for some i
    max_excess: int
    mean_lengths: np.ndarray
    frozen_mean_lengths: np.ndarray

    @property
    def fraction_ok(self) -> float:
        return 1.0 - self.violations / max(self.events, 1)


@numba.njit(cache=True)
def _push(buf, head, size, i, t):
    cap = buf.shape[1]
    if size[i] == cap:
        nb = np.empty((buf.shape[0], 2 * cap))
        for j in range(buf.shape[0]):
            for k in range(size[j]):
                nb[j, k] = buf[j, (head[j] + k) % cap]
            head[j] = 0
        buf = nb
        cap = 2 * cap
    buf[i, (head[i] + size[i]) % cap] = t
    size[i] += 1
    return buf


@numba.njit(cache=True)
def _run(lam, rates, cmax, steps, warm, batches, seed, hist_len):
    np.random.seed(seed)
    n = lam.shape[0]
    total = lam.sum() + cmax.sum()
    arr_cum = np.cumsum(lam)
    buf = np.empty((n, 64))
    head = np.zeros(n, np.int64)
    size = np.zeros(n, np.int64)
    active = 0
    t = 0.0
    t_warm = 0.0
    busy = np.zeros(n)
    hist = np.zeros((n, hist_len))
    soj_sum = np.zeros((batches, n))
    soj_cnt = np.zeros((batches, n), np.int64)
    per_batch = max((steps - warm) // batches, 1)
    for step in range(steps):
        dt = -math.log(1.0 - np.random.random()) / total
        if step == warm:
            t_warm = t
        if step >= warm:
            for i in range(n):
                busy[i] += dt if size[i] > 0 else 0.0
                hist[i, min(size[i], hist_len - 1)] += dt
        t += dt
        u = np.random.random() * total
        if u < arr_cum[n - 1]:
            i = 0
            while u >= arr_cum[i]:
                i += 1
            buf = _push(buf, head, size, i, t)
            active |= 1 << i
            continue
        u -= arr_cum[n - 1]
        i = 0
        while i < n - 1 and u >= cmax[i]:
            u -= cmax[i]
            i += 1
        if size[i] == 0 or u >= rates[i, active]:
            continue
        t_arr = buf[i, head[i]]
        head[i] = (head[i] + 1) % buf.shape[1]
        size[i] -= 1
        if size[i] == 0:
            active &= ~(1 << i)
        if step >= warm and t_arr >= t_warm:
            b = min((step - warm) // per_batch, batches - 1)
            soj_sum[b, i] += t - t_arr
            soj_cnt[b, i] += 1
    return soj_sum, soj_cnt, busy, hist, t - t_warm


@numba.njit(cache=True)
def _run_coupled(lam, rates, frozen, cmax, steps, seed):
    np.random.seed(seed)
    n = lam.shape[0]
    total = lam.sum() + cmax.sum()
    arr_cum = np.cumsum(lam)
    q = np.zeros(n, np.int64)
    qf = np.zeros(n, np.int64)
    active = 0
    violations = 0
    max_excess = 0
    sq = np.zeros(n)
    sqf = np.zeros(n)
    for step in range(steps):
        u = np.random.random() * total
        if u < arr_cum[n - 1]:
            i = 0
            while u >= arr_cum[i]:
                i += 1
            q[i] += 1
            qf[i] += 1
            active |= 1 << i
        else:
            u -= arr_cum[n - 1]
            i = 0
            while i < n - 1 and u >= cmax[i]:
                u -= cmax[i]
                i += 1
            # one uniform drives both systems; frozen rates never exceed the live ones
            if q[i] > 0 and u < rates[i, active]:
                q[i] -= 1
                if q[i] == 0:
                    active &= ~(1 << i)
            if qf[i] > 0 and u < frozen[i]:
                qf[i] -= 1
        bad = False
        for j in range(n):
            sq[j] += q[j]
            sqf[j] += qf[j]
            if q[j] > qf[j]:
                bad = True
                max_excess = max(max_excess, q[j] - qf[j])
        if bad:
            violations += 1
    return violations, max_excess, sq / steps, sqf / steps


def _prepare(x, tbl: EfficiencyTable, lam):
    n = tbl.n
    lam = _as_rates(lam, n)
    xv = x.x if isinstance(x, Allocation) else np.asarray(x, dtype=float)
    rates = np.ascontiguousarray(refined_rates(xv, tbl))
    cmax = rates.max(axis=1)
    return lam, rates, cmax


def simulate(x, tbl: EfficiencyTable, lam, horizon: int, seed: int = 0,
             warmup: float = DEFAULT_WARMUP, batches: int = DEFAULT_BATCHES) -> SimResult:
    """Simulate ``horizon`` uniformized steps and summarize the post-warmup part.

    Standard errors come from ``batches`` batch means over the kept steps.
    Runs outside the stability region still complete, with ``unstable`` set.
    """
    lam, rates, cmax = _prepare(x, tbl, lam)
    n = tbl.n
    horizon = int(horizon)
    warm = int(round(warmup * horizon))
    if not 0.0 <= warmup < 1.0 or horizon - warm < batches:
        raise ValueError(f"horizon {horizon} too short for warmup {warm} and {batches} batches")
    unstable = bool(np.any(rates[:, -1] <= lam))
    if not np.any(lam > 0) or cmax.sum() + lam.sum() == 0:
        cdf = np.ones((n, 1))
        nanv = np.full(n, np.nan)
        return SimResult(nanv, nanv.copy(), float("nan"), float("nan"), np.zeros(n), cdf,
                         np.ones(1), np.zeros(n, np.int64), horizon, seed, unstable)
    soj_sum, soj_cnt, busy, hist, span = _run(lam, rates, cmax, horizon, warm, batches,
                                              seed, HIST_LEN)
    cnt = soj_cnt.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = soj_sum.sum(axis=0) / cnt
        bm = soj_sum / soj_cnt
        se = np.nanstd(bm, axis=0, ddof=1) / np.sqrt(np.sum(soj_cnt > 0, axis=0))
        pooled_bm = soj_sum.sum(axis=1) / soj_cnt.sum(axis=1)
    pooled_mean = float(soj_sum.sum() / max(cnt.sum(), 1)) if cnt.sum() else float("nan")
    pooled_se = float(np.nanstd(pooled_bm, ddof=1) / np.sqrt(np.sum(np.isfinite(pooled_bm))))
    pmf = hist / span
    last = int(np.max(np.nonzero(pmf.sum(axis=0) > 0)[0])) + 1
    cdf = np.minimum(np.cumsum(pmf[:, :last], axis=1), 1.0)
    cdf[:, -1] = 1.0
    return SimResult(mean_sojourn=mean, stderr=se, pooled_mean=pooled_mean,
                     pooled_stderr=pooled_se, utilization=np.clip(busy / span, 0.0, 1.0),
                     cdf=cdf, pooled_cdf=cdf.mean(axis=0), served=cnt, horizon=horizon,
                     seed=seed, unstable=unstable, sim_time=float(span))


def utilization(res: SimResult) -> np.ndarray:
    """Fraction of simulated (post-warmup) time each queue was nonempty."""
    return res.utilization.copy()


def simulate_coupled(x, tbl: EfficiencyTable, lam, horizon: int, seed: int = 0) -> CoupledResult:
    """Run the live system and a copy frozen at worst-case rates on common randomness.

    Both systems see the same arrivals; a potential departure at cell i fires
    in the frozen copy iff ``U < r[i, N]`` and in the live one iff
    ``U < r[i, A(t)]``. Counts event times where the live queue is longer.
    """
    lam, rates, cmax = _prepare(x, tbl, lam)
    frozen = rates[:, -1].copy()
    viol, excess, mq, mqf = _run_coupled(lam, rates, frozen, cmax, int(horizon), seed)
    return CoupledResult(int(horizon), int(viol), int(excess), mq, mqf)


def auto_cap(x, tbl: EfficiencyTable, lam, mass: float = TRUNCATION_MASS) -> int:
    """Smallest cap whose frozen-rate geometric tails sum below ``mass / 10``.

    Each live queue is pathwise no longer than the same queue served at its
    worst-case rate, so ``sum_i rho_i ** cap`` bounds the truncated mass.
    """
    lam, rates, _ = _prepare(x, tbl, lam)
    busy = lam > 0
    if not np.any(busy):
        return 1
    rho = lam[busy] / rates[busy, -1]
    if np.any(rho >= 1):
        raise ValueError("worst-case rates do not cover the traffic; pass cap explicitly")
    target = mass / 10 / busy.sum()
    return max(int(math.ceil(math.log(target) / math.log(rho.max()))), 1)


@dataclass
class ExactSolution:
    delay: np.ndarray  # mean sojourn per cell, nan without traffic
    mean_length: np.ndarray
    utilization: np.ndarray  # P(queue nonempty)
    cap: int
    boundary_mass: float


def exact_small_delay(x, tbl: EfficiencyTable, lam, cap: int | None = None) -> np.ndarray:
    """Mean sojourn per cell from the queue-length chain truncated at ``cap``.

    Arrivals to a full queue are dropped. The stationary law comes from a
    sparse direct solve and delays from Little's law; cells without traffic
    get nan. ``cap=None`` picks one with :func:`auto_cap`.
    """
    return exact_small(x, tbl, lam, cap).delay


def exact_small(x, tbl: EfficiencyTable, lam, cap: int | None = None) -> ExactSolution:
    """Truncated-chain solution behind :func:`exact_small_delay`."""
    n = tbl.n
    if n > MAX_EXACT_BTS:
        raise ValueError(f"exact solver handles at most {MAX_EXACT_BTS} BTSs, got {n}")
    if cap is None:
        cap = auto_cap(x, tbl, lam)
    lam, rates, _ = _prepare(x, tbl, lam)
    side = cap + 1
    if side ** n > MAX_EXACT_STATES:
        raise ValueError(f"cap {cap} gives {side ** n} states (limit {MAX_EXACT_STATES}); "
                         "the traffic is too close to the worst-case rates for an exact solve")
    states = np.indices((side,) * n).reshape(n, -1).T  # row k -> queue lengths
    size = len(states)
    code = np.zeros(size, dtype=np.int64)
    for i in range(n):
        code |= (states[:, i] > 0).astype(np.int64) << i
    stride = side ** np.arange(n - 1, -1, -1)
    rows, cols, vals = [], [], []
    for i in range(n):
        if lam[i] > 0:
            src = np.nonzero(states[:, i] < cap)[0]
            rows.append(src)
            cols.append(src + stride[i])
            vals.append(np.full(len(src), lam[i]))
        src = np.nonzero(states[:, i] > 0)[0]
        rows.append(src)
        cols.append(src - stride[i])
        vals.append(rates[i, code[src]])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    out_rate = np.bincount(r, weights=v, minlength=size)
    # balance equations Q^T p = 0 with p[empty] pinned to 1
    qt = sps.csc_matrix((np.r_[v, -out_rate], (np.r_[c, np.arange(size)], np.r_[r, np.arange(size)])),
                        shape=(size, size))
    p = np.empty(size)
    p[0] = 1.0
    if size > 1:
        p[1:] = splu(qt[1:, 1:].tocsc(), permc_spec="MMD_AT_PLUS_A").solve(
            -qt[1:, 0].toarray().ravel())
    p = np.maximum(p, 0.0)
    p /= p.sum()
    boundary = float(p[np.any(states == cap, axis=1)].sum())
    if boundary >= TRUNCATION_MASS:
        raise TruncationError(f"truncation mass {boundary:.3g} >= {TRUNCATION_MASS:g}; "
                              f"increase cap above {cap}")
    mean_len = states.T @ p
    with np.errstate(invalid="ignore", divide="ignore"):
        delay = np.where(lam > 0, mean_len / lam, np.nan)
    return ExactSolution(delay, mean_len, (states > 0).T.astype(float) @ p, cap, boundary)
