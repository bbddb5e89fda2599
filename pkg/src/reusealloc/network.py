"""Network model: scenarios, interference and per-pattern spectral efficiency.

Units follow the usual convention for this kind of model: transmit and noise
PSDs in uW/Hz, distances in meters, bandwidth in Hz, packet length in bits and
spectral efficiencies normalized to packets/second over the whole band.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from . import patterns as pt

STANDARD_DEFAULTS = {
    "bandwidth_hz": 20e6,
    "packet_bits": 1e6,
    "noise_psd": 0.125e-6,
    "psd": 1.0,
    "pathloss_exp": 3.0,
}
MACRO_DEFAULTS = {"psd": 10.0, "pathloss_exp": 2.8}
PICO_HET_DEFAULTS = {"psd": 1.0, "pathloss_exp": 3.4}

MIN_DISTANCE_M = 1.0
SCHEMA_ID = "reusealloc.scenario/1"


class ConfigError(ValueError):
    """Malformed scenario description; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def shannon_rate(sinr, bandwidth_w: float, packet_len_l: float):
    """Default SINR -> packets/second mapping (Shannon capacity over W)."""
    return bandwidth_w / packet_len_l * np.log2(1.0 + sinr)


RateFn = Callable[[np.ndarray, float, float], np.ndarray]


@dataclass(frozen=True, eq=False)
class Scenario:
    positions: np.ndarray
    tx_psd: np.ndarray
    pathloss_exp: np.ndarray
    noise_psd: float
    bandwidth_w: float
    packet_len_l: float
    demand_points: np.ndarray
    demand_bts: np.ndarray
    arrival_rates: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        n = pos.shape[0]
        object.__setattr__(self, "positions", pos)
        for name in ("tx_psd", "pathloss_exp", "arrival_rates"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
            object.__setattr__(self, name, arr)
        dp = np.asarray(self.demand_points, dtype=float).reshape(-1, 2)
        db = np.asarray(self.demand_bts, dtype=int).reshape(-1)
        object.__setattr__(self, "demand_points", dp)
        object.__setattr__(self, "demand_bts", db)
        self._validate()
        for name in ("positions", "tx_psd", "pathloss_exp", "arrival_rates",
                     "demand_points", "demand_bts"):
            getattr(self, name).setflags(write=False)

    def _validate(self):
        n = self.n
        if n < 1:
            raise ConfigError("positions", "need at least one BTS")
        if self.positions.shape[1] != 2:
            raise ConfigError("positions", "expected 2-D coordinates")
        if not self.bandwidth_w > 0:
            raise ConfigError("bandwidth_hz", "must be > 0")
        if not self.packet_len_l > 0:
            raise ConfigError("packet_bits", "must be > 0")
        if not self.noise_psd > 0:
            raise ConfigError("noise_psd", "must be > 0")
        if np.any(self.tx_psd < 0) or not np.all(np.isfinite(self.tx_psd)):
            raise ConfigError("psd", "transmit PSDs must be finite and >= 0")
        if np.any(self.pathloss_exp <= 0):
            raise ConfigError("pathloss_exp", "must be > 0")
        if np.any(self.arrival_rates < 0) or not np.all(np.isfinite(self.arrival_rates)):
            raise ConfigError("traffic", "arrival rates must be finite and >= 0")
        if len(self.demand_points) != len(self.demand_bts):
            raise ConfigError("demand_points", "points and serving BTS lists differ in length")
        if np.any((self.demand_bts < 0) | (self.demand_bts >= n)):
            raise ConfigError("demand_points", "serving BTS index out of range")
        missing = sorted(set(range(n)) - set(self.demand_bts.tolist()))
        if missing:
            raise ConfigError("demand_points", f"BTS {missing} serve no demand point")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def with_psd(self, tx_psd) -> "Scenario":
        return replace(self, tx_psd=np.asarray(tx_psd, dtype=float))

    def with_rates(self, arrival_rates) -> "Scenario":
        return replace(self, arrival_rates=np.asarray(arrival_rates, dtype=float))

    def gains(self) -> np.ndarray:
        """Path gain ``G[j, u]`` from BTS j to demand point u."""
        d = np.linalg.norm(self.positions[:, None, :] - self.demand_points[None, :, :], axis=2)
        d = np.maximum(d, MIN_DISTANCE_M)
        return d ** (-self.pathloss_exp[:, None])


@dataclass(frozen=True, eq=False)
class EfficiencyTable:
    """Spectral efficiency ``s[i, A]`` in packets/second, A a pattern bitmask."""

    s: np.ndarray

    def __post_init__(self):
        s = np.array(self.s, dtype=float)
        object.__setattr__(self, "s", s)
        s.setflags(write=False)

    @property
    def n(self) -> int:
        return self.s.shape[0]

    def __getitem__(self, key):
        return self.s[key]

    def check(self, atol: float = 1e-9) -> None:
        """Assert the structural invariants of an efficiency table."""
        s, n = self.s, self.n
        if s.shape != (n, 1 << n):
            raise ValueError(f"table shape {s.shape} does not match n={n}")
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise ValueError("efficiencies must be finite and >= 0")
        mem = pt.membership(n)
        if np.any(s[~mem] != 0):
            raise ValueError("s[i, A] must vanish when i is not in A")
        codes = np.arange(1 << n)
        for j in range(n):
            without = codes[(codes >> j) & 1 == 0]
            drop = s[:, without] - s[:, without | (1 << j)]
            scale = np.maximum(1.0, np.abs(s[:, without]))
            if np.any(drop[mem[:, without]] < -atol * scale[mem[:, without]]):
                raise ValueError(f"adding BTS {j} increased some efficiency")


def _check_bts(i: int, sc: Scenario):
    if not 0 <= i < sc.n:
        raise IndexError(f"BTS index {i} out of range for n={sc.n}")


def interference_psd(i: int, pattern: int, sc: Scenario) -> np.ndarray:
    """Noise plus interference PSD seen by each demand point of cell ``i``.

    The value is referred to the serving link, i.e. divided by the serving
    path gain, so that the SINR is simply ``p_i / I``. For a UE colocated with
    its BTS (gain 1 after the 1 m clamp) this is the raw received PSD.
    Returns one entry per demand point served by ``i``.
    """
    _check_bts(i, sc)
    if not pt.contains(pattern, i):
        raise ValueError(f"BTS {i} is not in pattern {pt.label(pattern)}")
    pts = sc.demand_bts == i
    g = sc.gains()[:, pts]
    others = [j for j in pt.members(pattern) if j != i]
    received = sc.noise_psd + (sc.tx_psd[others, None] * g[others]).sum(axis=0)
    return received / g[i]


def spectral_efficiency(i: int, pattern: int, sc: Scenario, rate_fn: RateFn = shannon_rate) -> float:
    _check_bts(i, sc)
    if not pt.contains(pattern, i):
        return 0.0
    sinr = sc.tx_psd[i] / interference_psd(i, pattern, sc)
    return float(np.mean(rate_fn(sinr, sc.bandwidth_w, sc.packet_len_l)))


def build_table(sc: Scenario, rate_fn: RateFn = shannon_rate, cap: int = pt.MAX_BTS) -> EfficiencyTable:
    """Evaluate every ``s[i, A]`` at once.

    Efficiencies are computed per demand point and then averaged per cell.
    """
    n = sc.n
    pt.check_size(n, cap)
    mem = pt.membership(n).astype(float)
    g = sc.gains()
    s = np.zeros((n, 1 << n))
    counts = np.zeros(n)
    for u, c in enumerate(sc.demand_bts):
        contrib = sc.tx_psd * g[:, u]
        contrib[c] = 0.0
        received = sc.noise_psd + contrib @ mem
        sinr = sc.tx_psd[c] * g[c, u] / received
        s[c] += rate_fn(sinr, sc.bandwidth_w, sc.packet_len_l) * mem[c]
        counts[c] += 1
    s /= counts[:, None]
    tbl = EfficiencyTable(s)
    tbl.check()
    return tbl


# --- scenario construction -------------------------------------------------

def _hex_grid(width: float, height: float, spacing: float):
    """Hexagon centers and vertices of a pointy-top tiling of the rectangle."""
    row_h = spacing * math.sqrt(3) / 2
    radius = spacing / math.sqrt(3)
    eps = 1e-9
    centers = []
    for b in range(int(math.floor(height / row_h + eps)) + 1):
        y = b * row_h
        off = 0.5 * spacing * (b % 2)
        for a in range(int(math.floor((width - off) / spacing + eps)) + 1):
            centers.append((off + a * spacing, y))
    centers = np.array(centers)
    ang = np.deg2rad(30 + 60 * np.arange(6))
    offs = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    verts = (centers[:, None, :] + offs[None]).reshape(-1, 2)
    inside = ((verts[:, 0] >= -eps) & (verts[:, 0] <= width + eps)
              & (verts[:, 1] >= -eps) & (verts[:, 1] <= height + eps))
    verts = np.unique(np.round(verts[inside], 6), axis=0)
    return centers, verts


def _nearest(bts: np.ndarray, points: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(points[:, None, :] - bts[None, :, :], axis=2)
    return np.argmin(d, axis=1)


def _require(cfg: Mapping, key: str, where: str):
    if key not in cfg:
        raise ConfigError(f"{where}.{key}" if where else key, "missing required field")
    return cfg[key]


def _number(value, name: str, positive: bool = False) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected a number, got {value!r}") from None
    if not math.isfinite(v) or (positive and v <= 0):
        raise ConfigError(name, f"expected a finite{' positive' if positive else ''} number")
    return v


def _layout_explicit(lay: Mapping, psd: float, exp_: float):
    bts = _require(lay, "bts", "layout")
    if not isinstance(bts, list) or not bts:
        raise ConfigError("layout.bts", "expected a non-empty list")
    pos, psds, exps = [], [], []
    for k, b in enumerate(bts):
        where = f"layout.bts[{k}]"
        if not isinstance(b, Mapping):
            raise ConfigError(where, "expected an object")
        p = _require(b, "position", where)
        if not isinstance(p, (list, tuple)) or len(p) != 2:
            raise ConfigError(f"{where}.position", "expected [x, y]")
        pos.append([_number(p[0], f"{where}.position"), _number(p[1], f"{where}.position")])
        psds.append(_number(b.get("psd", psd), f"{where}.psd"))
        exps.append(_number(b.get("pathloss_exp", exp_), f"{where}.pathloss_exp", positive=True))
    pos = np.array(pos)
    dps = lay.get("demand_points")
    if dps is None:
        points, serving = pos.copy(), np.arange(len(pos))
    else:
        points, serving = [], []
        for k, d in enumerate(dps):
            where = f"layout.demand_points[{k}]"
            p = _require(d, "position", where)
            points.append([_number(p[0], f"{where}.position"), _number(p[1], f"{where}.position")])
            b = _require(d, "bts", where)
            if not isinstance(b, int) or not 0 <= b < len(pos):
                raise ConfigError(f"{where}.bts", f"invalid BTS index {b!r}")
            serving.append(b)
        points, serving = np.array(points), np.array(serving)
    return pos, np.array(psds), np.array(exps), points, serving


def _drop(rng, candidates: np.ndarray, points: np.ndarray, n_drop: int, fixed: np.ndarray, where: str):
    if n_drop > len(candidates):
        raise ConfigError(where, f"cannot drop {n_drop} BTSs on {len(candidates)} sites")
    for _ in range(1000):
        idx = np.sort(rng.choice(len(candidates), size=n_drop, replace=False))
        pos = np.vstack([fixed, candidates[idx]]) if len(fixed) else candidates[idx]
        serving = _nearest(pos, points)
        if len(np.unique(serving)) == len(pos):
            return pos, points, serving
    raise ConfigError(where, "could not find a drop where every BTS serves a demand point")


def _layout_hex(lay: Mapping, psd: float, exp_: float):
    area = lay.get("area", [100.0, 100.0])
    if isinstance(area, (int, float)):
        area = [area, area]
    width = _number(area[0], "layout.area", positive=True)
    height = _number(area[1], "layout.area", positive=True)
    spacing = _number(lay.get("spacing", 20.0), "layout.spacing", positive=True)
    n_bts = _require(lay, "n_bts", "layout")
    if not isinstance(n_bts, int) or n_bts < 1:
        raise ConfigError("layout.n_bts", "expected a positive integer")
    seed = _require(lay, "seed", "layout")
    if not isinstance(seed, int):
        raise ConfigError("layout.seed", "seeds are explicit integers")
    centers, verts = _hex_grid(width, height, spacing)
    macro = lay.get("macro")
    fixed = np.empty((0, 2))
    psds = [psd] * n_bts
    exps = [exp_] * n_bts
    if macro is not None:
        if macro is True:
            macro = {}
        pico = lay.get("pico", {})
        fixed = np.array([[width / 2, height / 2]])
        psds = [_number(macro.get("psd", MACRO_DEFAULTS["psd"]), "layout.macro.psd")] + \
            [_number(pico.get("psd", PICO_HET_DEFAULTS["psd"]), "layout.pico.psd")] * n_bts
        exps = [_number(macro.get("pathloss_exp", MACRO_DEFAULTS["pathloss_exp"]),
                        "layout.macro.pathloss_exp", positive=True)] + \
            [_number(pico.get("pathloss_exp", PICO_HET_DEFAULTS["pathloss_exp"]),
                     "layout.pico.pathloss_exp", positive=True)] * n_bts
    rng = np.random.default_rng(seed)
    pos, points, serving = _drop(rng, verts, centers, n_bts, fixed, "layout")
    return pos, np.array(psds, dtype=float), np.array(exps, dtype=float), points, serving


def _layout_line(lay: Mapping, psd: float, exp_: float):
    length = _number(lay.get("length", 100.0), "layout.length", positive=True)
    ue_spacing = _number(lay.get("ue_spacing", 5.0), "layout.ue_spacing", positive=True)
    n_bts = _require(lay, "n_bts", "layout")
    if not isinstance(n_bts, int) or n_bts < 1:
        raise ConfigError("layout.n_bts", "expected a positive integer")
    seed = _require(lay, "seed", "layout")
    if not isinstance(seed, int):
        raise ConfigError("layout.seed", "seeds are explicit integers")
    xs = np.arange(0.0, length + 1e-9, ue_spacing)
    points = np.stack([xs, np.zeros_like(xs)], axis=1)
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        bx = np.sort(rng.uniform(0.0, length, size=n_bts))
        pos = np.stack([bx, np.zeros_like(bx)], axis=1)
        serving = _nearest(pos, points)
        if len(np.unique(serving)) == n_bts:
            return pos, np.full(n_bts, psd), np.full(n_bts, exp_), points, serving
    raise ConfigError("layout", "could not find a drop where every BTS serves a demand point")


_LAYOUTS = {"explicit": _layout_explicit, "hex": _layout_hex, "line": _layout_line}


def build_scenario(config: Mapping[str, Any]) -> Scenario:
    """Build a :class:`Scenario` from a parsed JSON-style description.

    Top-level keys: ``schema`` (optional), ``profile`` (``"standard"`` by default),
    ``bandwidth_hz``, ``packet_bits``, ``noise_psd``, ``psd``, ``pathloss_exp``,
    ``layout`` and ``traffic``. See README for the full schema.
    """
    if not isinstance(config, Mapping):
        raise ConfigError("<root>", "expected an object")
    schema = config.get("schema", SCHEMA_ID)
    if schema != SCHEMA_ID:
        raise ConfigError("schema", f"unsupported schema {schema!r}, expected {SCHEMA_ID!r}")
    profile = config.get("profile", "standard")
    if profile != "standard":
        raise ConfigError("profile", f"unknown profile {profile!r}")
    base = dict(STANDARD_DEFAULTS)
    for key in base:
        if key in config:
            base[key] = _number(config[key], key, positive=key != "psd")
    lay = _require(config, "layout", "")
    if not isinstance(lay, Mapping):
        raise ConfigError("layout", "expected an object")
    kind = lay.get("type", "explicit")
    if kind not in _LAYOUTS:
        raise ConfigError("layout.type", f"unknown layout {kind!r}; choose from {sorted(_LAYOUTS)}")
    layout_cfg = dict(lay)
    pos, psd, exps, points, serving = _LAYOUTS[kind](layout_cfg, base["psd"], base["pathloss_exp"])
    sc = Scenario(
        positions=pos, tx_psd=psd, pathloss_exp=exps, noise_psd=base["noise_psd"],
        bandwidth_w=base["bandwidth_hz"], packet_len_l=base["packet_bits"],
        demand_points=points, demand_bts=serving, arrival_rates=np.zeros(len(pos)),
        meta={"layout": kind},
    )
    return sc.with_rates(_traffic(config.get("traffic"), sc))


def proportional_rates(sc: Scenario, mean_rate: float) -> np.ndarray:
    """Arrival rates proportional to full-reuse efficiencies with the given mean."""
    n = sc.n
    s_full = np.array([spectral_efficiency(i, pt.full(n), sc) for i in range(n)])
    return mean_rate * s_full / s_full.mean()


def _traffic(tr, sc: Scenario) -> np.ndarray:
    if tr is None:
        return np.zeros(sc.n)
    if not isinstance(tr, Mapping):
        raise ConfigError("traffic", "expected an object")
    if "rates" in tr:
        rates = tr["rates"]
        if not isinstance(rates, list) or len(rates) != sc.n:
            raise ConfigError("traffic.rates", f"expected a list of {sc.n} rates")
        vals = np.array([_number(r, f"traffic.rates[{k}]") for k, r in enumerate(rates)])
        if np.any(vals < 0):
            raise ConfigError("traffic.rates", "rates must be >= 0")
        return vals
    if "mean_rate" in tr:
        mean = _number(tr["mean_rate"], "traffic.mean_rate")
        if mean < 0:
            raise ConfigError("traffic.mean_rate", "must be >= 0")
        return proportional_rates(sc, mean)
    raise ConfigError("traffic", "expected 'rates' or 'mean_rate'")


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None


def load_scenario(path) -> Scenario:
    return build_scenario(load_config(path))
