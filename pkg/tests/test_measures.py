from pathlib import Path

import numpy as np
import pytest

from impatientq.cli import table_row
from impatientq.measures import measures_mg1, solve, solve_with_diagnostics
from impatientq.mg1 import solve_mg1
from impatientq.model import (ClassParams, Deterministic, Erlang, Exponential, HyperExponential,
                              Mg1Config, mmk)
from impatientq.oracles import erlang_a
from impatientq.scenario import load_scenario, with_total_arrival_rate

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def mg1cfg(l1, l2, s1, s2, p1, p2):
    return Mg1Config(ClassParams(l1, s1, p1), ClassParams(l2, s2, p2))


def table1_at(per_hour):
    sc = load_scenario(SCENARIOS / "table1.json")
    return table_row(solve(with_total_arrival_rate(sc.system, per_hour / 3600.0)))


def section5(kind, total):
    mu = (1, 2)
    theta = {"base": (1.5, 1.5), "positive": (1, 2), "negative": (2, 1)}[kind]
    return mmk(5, (total / 2, total / 2), mu, theta)


REPORTS = [
    mmk(5, (10, 10), (1, 2), (1.5, 1.5)),
    mmk(3, (0.4, 2.0), (0.5, 3.0), (0.3, 4.0)),
    mg1cfg(0.5, 0.3, Deterministic(1.0), Erlang(3, 2.0), Exponential(0.8), Exponential(2.0)),
    mg1cfg(0.9, 0.4, Exponential(2.0), Deterministic(0.5),
           HyperExponential((0.3, 0.7), (0.5, 3.0)), Exponential(1.0)),
]


@pytest.mark.parametrize("config", REPORTS)
def test_report_identities(config):
    r = solve(config)
    lams = [c.arrival_rate for c in config.classes]
    for lam, c in zip(lams, (r.class1, r.class2)):
        assert 0 <= c.p_serve <= 1
        assert c.throughput == lam * c.p_serve
        assert c.throughput + c.reneging_rate == pytest.approx(lam, rel=4e-16)
        assert c.lq == lam * c.awt
        assert c.awt == pytest.approx(c.p_serve * c.wait_served + (1 - c.p_serve) * c.wait_reneged,
                                      rel=1e-10, abs=1e-15)
    assert r.throughput + r.reneging_rate == pytest.approx(sum(lams), rel=4e-16)
    assert 0 <= r.utilization <= 1
    total = sum(lams)
    assert r.overall_awt == pytest.approx((lams[0] * r.class1.awt + lams[1] * r.class2.awt) / total,
                                          rel=1e-10)
    # all customers: waiting = served share x served wait + reneged share x reneged wait
    assert r.overall_awt == pytest.approx(
        r.pct_served_all * r.wait_served_all + (1 - r.pct_served_all) * r.wait_reneged_all,
        rel=1e-10)


def test_multi_server_utilization_formula():
    cfg = mmk(4, (3, 2), (1.0, 2.5), (0.7, 1.1))
    r = solve(cfg)
    want = sum(l * c.p_serve / m for l, m, c in zip(cfg.lam, cfg.mu, (r.class1, r.class2))) / 4
    assert r.utilization == pytest.approx(want, rel=1e-14)
    ast = (r.class1.throughput / 1.0 + r.class2.throughput / 2.5) / r.throughput
    assert r.avg_service_time_served == pytest.approx(ast, rel=1e-14)


def test_table1_high_load_row():
    row = table1_at(120)
    want = dict(awt1=293.92, awt2=434.13, rs1_pct=25.42, rs2_pct=54.13, aq1=4.90, aq2=7.24,
                util_pct=99.96, ast=376.98)
    for k, v in want.items():
        assert row[k] == pytest.approx(v, abs=0.01 + 1e-9), k


def test_table1_low_load_row():
    row = table1_at(36)
    want = dict(awt1=27.92, rs1_pct=92.92, rs2_pct=96.56, util_pct=64.15, ast=338.56)
    for k, v in want.items():
        assert row[k] == pytest.approx(v, abs=0.01 + 1e-9), k
    # exact chain over ordered queues (cap 13, tail mass 1e-6) gives 32.5705
    assert row["awt2"] == pytest.approx(32.571, abs=0.001)


def test_mg1_patience_matched_to_service():
    # service mean equal to the patience mean gives E(L_i) = lambda_i / theta_i
    c = mg1cfg(0.7, 0.5, Exponential(2.0), Exponential(0.5), Exponential(2.0), Exponential(0.5))
    r = solve(c)
    assert r.class1.l_total == pytest.approx(0.7 / 2.0, rel=1e-10)
    assert r.class2.l_total == pytest.approx(0.5 / 0.5, rel=1e-10)


def test_mg1_single_class_matches_erlang_a():
    c = mg1cfg(1.4, 0, Exponential(1.1), Exponential(3.0), Exponential(0.4), Exponential(1.0))
    r = measures_mg1(solve_mg1(c), c)
    ref = erlang_a(lam=1.4, mu=1.1, theta=0.4, servers=1)
    assert r.class1.p_serve == pytest.approx(ref.p_serve, rel=1e-8)
    assert r.class1.awt == pytest.approx(ref.awt, rel=1e-8)
    assert r.class1.lq == pytest.approx(ref.lq, rel=1e-8)
    assert r.utilization == pytest.approx(ref.utilization, rel=1e-8)
    assert r.class2 == type(r.class2)(*([0.0] * 9))


def test_hyperexponential_patience_mixes_branches():
    p = HyperExponential((0.25, 0.75), (0.5, 4.0))
    c = mg1cfg(0.6, 0.6, Deterministic(1.0), Exponential(1.5), p, Exponential(1.0))
    sol = solve_mg1(c)
    r = measures_mg1(sol, c)
    assert r.class1.p_serve == pytest.approx(0.25 * sol.psi(0.5) + 0.75 * sol.psi(4.0), rel=1e-14)
    assert r.class1.awt == pytest.approx(
        0.25 * (1 - sol.psi(0.5)) / 0.5 + 0.75 * (1 - sol.psi(4.0)) / 4.0, rel=1e-14)


@pytest.mark.parametrize("config", [
    mmk(5, (0, 0), (1, 2), (1, 1)),
    mg1cfg(0, 0, Exponential(1), Deterministic(2), Exponential(1), Exponential(3)),
])
def test_empty_system_is_all_zero(config):
    r, diag = solve_with_diagnostics(config)
    assert all(v == 0 and not np.signbit(v) for v in r.flat().values())
    assert diag["tail_bound"] == 0


@pytest.mark.parametrize("kind", ["base", "positive", "negative"])
def test_served_wait_exceeds_reneged_wait_at_heavier_load(kind):
    for total in np.linspace(12, 20, 5):
        r = solve(section5(kind, total))
        for c in (r.class1, r.class2):
            assert c.wait_served >= c.wait_reneged


def test_light_load_reverses_wait_ordering():
    from impatientq.sim import SimConfig, simulate
    cfg = section5("base", 6)
    r = solve(cfg)
    assert r.class1.wait_served < r.class1.wait_reneged
    est = simulate(SimConfig(cfg, horizon=200_000, replications=5, seed=11))
    for name in ("class1_wait_served", "class1_wait_reneged"):
        m, h = est.interval(name)
        assert abs(r.flat()[name] - m) <= 3 * h


def test_base_system_service_time_constant_in_load():
    ast = [solve(section5("base", t)).avg_service_time_served for t in np.linspace(6, 20, 8)]
    assert np.ptp(ast) < 1e-9
    assert ast[0] == pytest.approx(0.75, rel=1e-12)


def test_served_share_ordering():
    for total in np.linspace(6, 20, 8):
        pos, base, neg = (solve(section5(k, total)).pct_served_all
                          for k in ("positive", "base", "negative"))
        assert pos < base < neg


def test_report_dict_round_trip():
    from impatientq.measures import PerformanceReport
    r = solve(REPORTS[1])
    assert PerformanceReport.from_dict(r.to_dict()) == r
