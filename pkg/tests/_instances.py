"""Random instance generators shared by the test modules."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from reusealloc import Scenario, build_table, throughput_margin
from reusealloc.network import STANDARD_DEFAULTS


def random_scenario(rng: np.random.Generator, n: int, side: float = 60.0) -> Scenario:
    """BTSs dropped uniformly in a square, each serving a UE at its own site."""
    pos = rng.uniform(0.0, side, size=(n, 2))
    return Scenario(positions=pos, tx_psd=STANDARD_DEFAULTS["psd"],
                    pathloss_exp=STANDARD_DEFAULTS["pathloss_exp"],
                    noise_psd=STANDARD_DEFAULTS["noise_psd"],
                    bandwidth_w=STANDARD_DEFAULTS["bandwidth_hz"],
                    packet_len_l=STANDARD_DEFAULTS["packet_bits"],
                    demand_points=pos, demand_bts=np.arange(n), arrival_rates=0.0)


def random_table(rng: np.random.Generator, n: int, side: float = 60.0):
    return build_table(random_scenario(rng, n, side))


def interior_rates(rng: np.random.Generator, tbl, lo: float = 0.2, hi: float = 0.9):
    """Arrival rates at a random fraction of the throughput boundary."""
    direction = tbl.s[:, -1] * rng.uniform(0.5, 1.5, tbl.n)
    rho = throughput_margin(tbl, direction)
    return direction * rho * rng.uniform(lo, hi)


def dirichlet_allocation(rng: np.random.Generator, n: int) -> np.ndarray:
    x = np.zeros(1 << n)
    x[1:] = rng.dirichlet(np.ones((1 << n) - 1))
    return x


def stable_rates(rng: np.random.Generator, tbl, x, lo: float = 0.1, hi: float = 0.9):
    """Rates below the worst-case refined rates of ``x``."""
    return tbl.s @ x * rng.uniform(lo, hi, tbl.n)


def lp_max_rho(s, lam):
    """max rho s.t. s x >= rho lam on the simplex, as one LP in (x, rho)."""
    n, m = s.shape
    c = np.zeros(m + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-s, lam[:, None]])
    a_eq = np.r_[np.ones(m), 0.0][None]
    bounds = [(0, 0)] + [(0, None)] * (m - 1) + [(0, None)]
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(n), A_eq=a_eq, b_eq=[1.0], bounds=bounds,
                  method="highs")
    return -res.fun
