import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reusealloc import (ConfigError, Scenario, build_scenario, build_table, interference_psd,
                        load_scenario, shannon_rate, spectral_efficiency)
from reusealloc import patterns as pt
from reusealloc.network import MACRO_DEFAULTS, STANDARD_DEFAULTS, PICO_HET_DEFAULTS, proportional_rates

from _instances import random_scenario


def explicit(positions, **extra):
    cfg = {"layout": {"type": "explicit", "bts": [{"position": p} for p in positions]}}
    cfg.update(extra)
    return build_scenario(cfg)


def test_single_bts_interference_is_noise():
    sc = explicit([[0.0, 0.0]])
    assert sc.n == 1
    np.testing.assert_array_equal(interference_psd(0, 0b1, sc), [0.125e-6])


def test_two_bts_hand_interference():
    # UE colocated with BTS 0, interferer 10 m away with unit PSD and exponent 3
    sc = explicit([[0.0, 0.0], [10.0, 0.0]])
    got = interference_psd(0, 0b11, sc)
    np.testing.assert_allclose(got, [0.125e-6 + 1e-3], rtol=1e-12)
    np.testing.assert_array_equal(interference_psd(0, 0b01, sc), [0.125e-6])


def test_interference_needs_membership():
    sc = explicit([[0.0, 0.0], [10.0, 0.0]])
    with pytest.raises(ValueError):
        interference_psd(0, 0b10, sc)


@pytest.mark.parametrize("sinr, expected", [(1.0, 20.0), (3.0, 40.0)])
def test_shannon_arithmetic(sinr, expected):
    assert shannon_rate(sinr, 20e6, 1e6) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("sinr, expected", [(1.0, 20.0), (3.0, 40.0)])
def test_efficiency_from_scenario(sinr, expected):
    sc = explicit([[0.0, 0.0]], noise_psd=1.0 / sinr)
    assert spectral_efficiency(0, 0b1, sc) == pytest.approx(expected, rel=1e-12)
    assert spectral_efficiency(0, 0b0, sc) == 0.0


def test_single_bts_table():
    tbl = build_table(explicit([[0.0, 0.0]]))
    assert tbl.s.shape == (1, 2)
    assert tbl[0, 0] == 0.0 and tbl[0, 1] > 0


def test_symmetric_pair():
    tbl = build_table(explicit([[0.0, 0.0], [15.0, 0.0]]))
    assert tbl[0, 0b01] == pytest.approx(tbl[1, 0b10], rel=1e-14)
    assert tbl[0, 0b11] == pytest.approx(tbl[1, 0b11], rel=1e-14)
    assert tbl[0, 0b01] > tbl[0, 0b11]


def test_table_matches_pointwise_evaluator(rng):
    sc = build_scenario({"layout": {"type": "hex", "n_bts": 4, "seed": 3}})
    tbl = build_table(sc)
    for i, a in itertools.product(range(4), range(16)):
        assert tbl[i, a] == pytest.approx(spectral_efficiency(i, a, sc), rel=1e-12)


def test_efficiency_averages_over_demand_points():
    cfg = {"layout": {"type": "explicit", "bts": [{"position": [0, 0]}, {"position": [30, 0]}],
                      "demand_points": [{"position": [0, 5], "bts": 0},
                                        {"position": [5, 0], "bts": 0},
                                        {"position": [30, 0], "bts": 1}]}}
    sc = build_scenario(cfg)
    s = spectral_efficiency(0, 0b11, sc)
    per_point = [shannon_rate(1.0 / interference_psd(0, 0b11, sc)[k], 20e6, 1e6) for k in range(2)]
    assert s == pytest.approx(np.mean(per_point), rel=1e-12)


@given(st.integers(1, 5), st.integers(0, 10_000))
def test_table_invariants(n, seed):
    tbl = build_table(random_scenario(np.random.default_rng(seed), n))
    s = tbl.s
    assert np.all(np.isfinite(s)) and np.all(s >= 0)
    mem = pt.membership(n)
    assert np.all(s[~mem] == 0)
    for i in range(n):
        for a in range(1 << n):
            if not pt.contains(a, i):
                continue
            for j in range(n):
                assert s[i, a | (1 << j)] <= s[i, a] * (1 + 1e-12)
        assert s[i, 1 << i] >= s[i, -1]


@given(st.integers(2, 5), st.integers(0, 10_000))
def test_permutation_equivariance(n, seed):
    rng = np.random.default_rng(seed)
    sc = random_scenario(rng, n)
    perm = rng.permutation(n)
    moved = Scenario(positions=sc.positions[perm], tx_psd=sc.tx_psd[perm],
                     pathloss_exp=sc.pathloss_exp[perm], noise_psd=sc.noise_psd,
                     bandwidth_w=sc.bandwidth_w, packet_len_l=sc.packet_len_l,
                     demand_points=sc.positions[perm], demand_bts=np.arange(n), arrival_rates=0.0)
    s0, s1 = build_table(sc).s, build_table(moved).s
    # new BTS k is old BTS perm[k]
    for a in range(1 << n):
        old = pt.from_members(perm[k] for k in pt.members(a))
        np.testing.assert_allclose(s1[:, a], s0[perm, old], rtol=1e-12)


def test_hex_drop_assigns_nearest():
    sc = build_scenario({"layout": {"type": "hex", "n_bts": 7, "seed": 1,
                                    "area": [100, 100], "spacing": 20}})
    assert sc.n == 7
    d = np.linalg.norm(sc.demand_points[:, None] - sc.positions[None], axis=2)
    np.testing.assert_array_equal(sc.demand_bts, np.argmin(d, axis=1))
    assert set(sc.demand_bts.tolist()) == set(range(7))
    # hexagon centres 20 m apart
    nearest = np.sort(np.linalg.norm(sc.demand_points[:, None] - sc.demand_points[None], axis=2),
                      axis=1)[:, 1]
    assert nearest.min() == pytest.approx(20.0)


def test_hex_drop_is_deterministic():
    cfg = {"layout": {"type": "hex", "n_bts": 5, "seed": 42}}
    a, b = build_scenario(cfg), build_scenario(cfg)
    np.testing.assert_array_equal(a.positions, b.positions)
    c = build_scenario({"layout": {"type": "hex", "n_bts": 5, "seed": 43}})
    assert not np.array_equal(a.positions, c.positions)


def test_standard_defaults():
    sc = build_scenario({"layout": {"type": "hex", "n_bts": 3, "seed": 0}})
    assert sc.bandwidth_w == 20e6 and sc.packet_len_l == 1e6
    assert sc.noise_psd == 0.125e-6
    np.testing.assert_array_equal(sc.tx_psd, 1.0)
    np.testing.assert_array_equal(sc.pathloss_exp, 3.0)


def test_heterogeneous_defaults():
    sc = build_scenario({"layout": {"type": "hex", "n_bts": 4, "seed": 0, "macro": True}})
    assert sc.n == 5
    assert sc.tx_psd[0] == 10.0 and sc.pathloss_exp[0] == 2.8
    np.testing.assert_array_equal(sc.tx_psd[1:], 1.0)
    np.testing.assert_array_equal(sc.pathloss_exp[1:], 3.4)
    assert MACRO_DEFAULTS["psd"] == 10.0 and PICO_HET_DEFAULTS["pathloss_exp"] == 3.4
    np.testing.assert_array_equal(sc.positions[0], [50.0, 50.0])


def test_line_layout():
    sc = build_scenario({"layout": {"type": "line", "n_bts": 3, "seed": 2, "length": 60}})
    assert sc.n == 3
    assert np.all(sc.positions[:, 1] == 0)
    assert np.all(np.diff(sc.positions[:, 0]) >= 0)


def test_traffic_rates_and_proportional():
    sc = build_scenario({"layout": {"type": "explicit", "bts": [{"position": [0, 0]}]},
                         "traffic": {"rates": [10]}})
    np.testing.assert_array_equal(sc.arrival_rates, [10.0])
    sc = build_scenario({"layout": {"type": "hex", "n_bts": 3, "seed": 0},
                         "traffic": {"mean_rate": 12}})
    s_full = build_table(sc).s[:, -1]
    assert sc.arrival_rates.mean() == pytest.approx(12.0)
    np.testing.assert_allclose(sc.arrival_rates / s_full, 12.0 / s_full.mean())
    np.testing.assert_allclose(proportional_rates(sc, 12.0), sc.arrival_rates)


@pytest.mark.parametrize("cfg, field_name", [
    ({}, "layout"),
    ({"layout": {"type": "ring"}}, "layout.type"),
    ({"layout": {"type": "hex", "seed": 1}}, "layout.n_bts"),
    ({"layout": {"type": "hex", "n_bts": 3}}, "layout.seed"),
    ({"layout": {"type": "hex", "n_bts": 3, "seed": 1.5}}, "layout.seed"),
    ({"layout": {"type": "explicit", "bts": []}}, "layout.bts"),
    ({"layout": {"type": "explicit", "bts": [{"position": [0]}]}}, "layout.bts[0].position"),
    ({"layout": {"type": "explicit", "bts": [{"position": [0, 0]}]},
      "traffic": {"rates": [1, 2]}}, "traffic.rates"),
    ({"layout": {"type": "explicit", "bts": [{"position": [0, 0]}]},
      "traffic": {"mean_rate": -1}}, "traffic.mean_rate"),
    ({"layout": {"type": "explicit", "bts": [{"position": [0, 0]}]}, "bandwidth_hz": 0},
     "bandwidth_hz"),
    ({"layout": {"type": "explicit", "bts": [{"position": [0, 0]}]},
      "schema": "other/9"}, "schema"),
    ({"layout": {"type": "explicit", "bts": [{"position": [0, 0]}, {"position": [9, 9]}],
                 "demand_points": [{"position": [0, 0], "bts": 0}]}}, "demand_points"),
])
def test_config_errors_name_the_field(cfg, field_name):
    with pytest.raises(ConfigError) as err:
        build_scenario(cfg)
    assert err.value.field == field_name


def test_too_many_bts():
    sc = build_scenario({"layout": {"type": "explicit",
                                    "bts": [{"position": [3.0 * k, 0]} for k in range(17)]}})
    with pytest.raises(ValueError, match="exponential"):
        build_table(sc)


def test_load_scenario_file(tmp_path):
    path = tmp_path / "one.json"
    path.write_text(json.dumps({"layout": {"type": "explicit", "bts": [{"position": [0, 0]}]},
                                "traffic": {"rates": [5]}}))
    sc = load_scenario(path)
    assert sc.n == 1 and sc.arrival_rates[0] == 5.0
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_scenario(path)


def test_distance_clamp():
    # a UE closer than 1 m sees the same gain as one at 1 m
    sc = explicit([[0.0, 0.0], [0.5, 0.0]])
    assert math.isfinite(build_table(sc).s.sum())
    np.testing.assert_allclose(interference_psd(0, 0b11, sc), [0.125e-6 + 1.0])
