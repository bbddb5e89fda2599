"""Refined delay model.

Each BTS adapts its rate to the instantaneous set of active (nonempty) BTSs.
The queues are then coupled; the approximation here lumps the coupled chain
into a 2**n state chain over active sets, solves it for its stationary law
and converts mean queue lengths to sojourn times with Little's law.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import patterns as pt
from .conservative import DelayReport, _as_rates, _xvec, weighted_delay
from .network import EfficiencyTable
from .simplex import InfeasibleError

MAX_LUMPED_BTS = 12
NEG_CLAMP = 1e-12


@dataclass
class LumpedChain:
    """Generator over active sets; ``p`` is filled by :func:`steady_state`."""

    Q: np.ndarray
    rates: np.ndarray  # r[i, A]
    lam: np.ndarray
    p: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.lam)

    def to_dict(self) -> dict:
        out = {"n": self.n, "Q": self.Q.tolist()}
        if self.p is not None:
            out["p"] = {str(a): float(v) for a, v in enumerate(self.p)}
        return out


def _index_and(n: int) -> np.ndarray:
    codes = np.arange(1 << n)
    return codes[:, None] & codes[None, :]


def refined_rates(x, tbl: EfficiencyTable) -> np.ndarray:
    """``r[i, A] = sum_B s[i, B & A] x_B`` for every BTS i and active set A."""
    xv = _xvec(x)
    n = tbl.n
    m = 1 << n
    r = np.empty((n, m))
    codes = np.arange(m)
    block = max(1, (1 << 22) // max(m, 1))
    for start in range(0, m, block):
        a = codes[start:start + block]
        inter = a[:, None] & codes[None, :]
        r[:, start:start + block] = tbl.s[:, inter] @ xv
    return r


def rates_delta(tbl: EfficiencyTable, pattern: int) -> np.ndarray:
    """Change of ``r[:, A]`` per unit of x_pattern: ``s[:, pattern & A]``."""
    codes = np.arange(1 << tbl.n)
    return tbl.s[:, codes & pattern]


def _generator(r: np.ndarray, lam: np.ndarray) -> np.ndarray:
    n, m = r.shape
    q = np.zeros((m, m))
    codes = np.arange(m)
    for i in range(n):
        bit = 1 << i
        off = codes[(codes & bit) == 0]
        on = off | bit
        q[off, on] = lam[i]
        q[on, off] = r[i, on] - lam[i]
    q[codes, codes] = -q.sum(axis=1)
    return q


def check_stability(r: np.ndarray, lam: np.ndarray) -> None:
    n = len(lam)
    worst = r[:, pt.full(n)]
    bad = np.nonzero(worst <= lam)[0]
    if len(bad):
        i = int(bad[0])
        raise InfeasibleError(
            f"cell {i + 1}: worst-case rate {worst[i]:.6g} <= arrival rate {lam[i]:.6g}", cell=i)


def lumped_generator(x, tbl: EfficiencyTable, lam, rates: np.ndarray | None = None) -> LumpedChain:
    n = tbl.n
    pt.check_size(n, MAX_LUMPED_BTS)
    lam = _as_rates(lam, n)
    r = refined_rates(x, tbl) if rates is None else rates
    check_stability(r, lam)
    return LumpedChain(Q=_generator(r, lam), rates=r, lam=lam)


def _solve_stationary(q: np.ndarray) -> np.ndarray:
    m = q.shape[0]
    a = q.T.copy()
    a[-1, :] = 1.0
    b = np.zeros(m)
    b[-1] = 1.0
    return linalg.solve(a, b)


def _clean(p: np.ndarray) -> np.ndarray:
    if np.any(p < -NEG_CLAMP * max(1.0, np.abs(p).max())):
        raise ValueError(f"stationary solve produced negative mass {p.min():.3g}")
    p = np.maximum(p, 0.0)
    return p / p.sum()


def steady_state(chain: LumpedChain) -> np.ndarray:
    """Stationary distribution over active sets.

    Cells without traffic can never become active from the empty set, so the
    chain is solved on the subsets of the busy cells and zero is reported on
    every other active set.
    """
    n = chain.n
    busy = pt.from_members(np.nonzero(chain.lam > 0)[0])
    m = 1 << n
    if busy == pt.full(n):
        p = _clean(_solve_stationary(chain.Q))
    else:
        reach = np.array(list(pt.subsets(busy)))
        sub = chain.Q[np.ix_(reach, reach)].copy()
        np.fill_diagonal(sub, 0.0)
        np.fill_diagonal(sub, -sub.sum(axis=1))
        p = np.zeros(m)
        p[reach] = _clean(_solve_stationary(sub))
    chain.p = p
    return p


def delays_from_chain(r: np.ndarray, lam: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Mean sojourn per cell from the lumped law (nan where lambda_i = 0)."""
    n = len(lam)
    mem = pt.membership(n)
    t = np.full(n, np.nan)
    for i in range(n):
        if lam[i] <= 0:
            continue
        a = mem[i]
        ri = r[i, a]
        t[i] = float(np.sum(p[a] * ri / ((ri - lam[i]) * lam[i])))
    return t


def refined_delay(x, tbl: EfficiencyTable, lam) -> DelayReport:
    chain = lumped_generator(x, tbl, lam)
    p = steady_state(chain)
    t = delays_from_chain(chain.rates, chain.lam, p)
    return DelayReport(t=t, T=weighted_delay(np.nan_to_num(t), chain.lam),
                       r=chain.rates[:, pt.full(tbl.n)], model="refined")


def queue_length_pmf(rate: float, lam: float, lengths: np.ndarray) -> np.ndarray:
    """Conditional length law of an active queue in a fixed group: geometric on 1, 2, ..."""
    rho = lam / rate
    lengths = np.asarray(lengths)
    return np.where(lengths >= 1, (1 - rho) * rho ** np.maximum(lengths - 1, 0), 0.0)
