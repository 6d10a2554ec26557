"""End-to-end acceptance checks.

Each check records a PASS/FAIL line under its criterion number; the lines are
printed in the terminal summary (see conftest.py).  Checks that cannot pass
with the exact model are marked xfail(strict=True) with the reason.
"""
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from scipy import stats

import invariants as inv
from impatientq import measures, mg1, mmk
from impatientq.cli import table_row
from impatientq.measures import measures_mmk, solve
from impatientq.model import (ClassParams, Deterministic, Erlang, Exponential, HyperExponential,
                              Mg1Config, MmkConfig)
from impatientq.model import mmk as mmk_config
from impatientq.oracles import erlang_a
from impatientq.scenario import load_scenario, pooled_service, with_total_arrival_rate
from impatientq.sim import SimConfig, simulate

from conftest import record

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
LAST_DIGIT = 0.01 + 1e-9


def check(criterion, label, ok, detail=""):
    record(criterion, label, ok, detail)
    assert ok, f"{label}: {detail}"


def two_class(kind, per_class):
    theta = {"base": (1.5, 1.5), "positive": (1, 2), "negative": (2, 1)}[kind]
    return mmk_config(5, (per_class, per_class), (1, 2), theta)


# --- 1: conditional waits of the base and negative systems ------------------------

PRINTED_WAITS = {
    "base": (0.334, 0.654, 0.337, 0.443),
    "negative": (0.372, 0.641, 0.324, 0.442),
}


@pytest.mark.xfail(strict=True, reason="exact model gives 0.333/0.657/0.339/0.445 (base) and "
                                       "0.371/0.644/0.325/0.444 (negative); confirmed by an "
                                       "ordered-queue chain and simulation")
def test_conditional_waits_match_printed_values():
    start = time.perf_counter()
    misses = []
    for kind, want in PRINTED_WAITS.items():
        r = solve(two_class(kind, 10))
        got = (r.pct_served_all, r.wait_served_all, r.wait_reneged_all, r.overall_awt)
        misses += [f"{kind} {w} vs {g:.5f}" for w, g in zip(want, got)
                   if abs(g - w) > 0.001 + 1e-9]
    elapsed = time.perf_counter() - start
    check(1, "conditional waits at lambda=10 per class", not misses and elapsed < 10,
          f"{elapsed:.2f}s; off: {', '.join(misses)}")


# --- 2 and 3: call-centre rows ----------------------------------------------------

DISTINCT_ROWS = {
    36: (27.92, 32.56, 92.92, 96.56, 0.14, 0.16, 64.15, 338.56),
    45: (54.84, 65.37, 86.08, 93.09, 0.34, 0.41, 76.33, 340.79),
    60: (114.06, 141.66, 71.06, 85.03, 0.95, 1.18, 90.13, 346.46),
    120: (293.92, 434.13, 25.42, 54.13, 4.90, 7.24, 99.96, 376.98),
}
POOLED_ROWS = {
    36: (26.24, 30.26, 93.34, 96.80, 0.13, 0.15, 63.96, 336.40),
    45: (50.99, 59.92, 87.06, 93.67, 0.32, 0.37, 76.00, 336.40),
    60: (104.76, 127.56, 73.42, 86.52, 0.87, 1.06, 89.67, 336.40),
    120: (274.74, 389.50, 30.28, 58.85, 4.58, 6.49, 99.95, 336.40),
}
COLUMNS = ("awt1", "awt2", "rs1_pct", "rs2_pct", "aq1", "aq2", "util_pct", "ast")
CLASS2_WAIT_GAP = pytest.mark.xfail(
    strict=True, reason="class-2 AWT differs by 0.011-0.014 s; an ordered-queue chain agrees "
                        "with the solver")


def call_centre(per_hour):
    sc = load_scenario(SCENARIOS / "table1.json")
    return with_total_arrival_rate(sc.system, per_hour / 3600.0)


def row_misses(row, want):
    return [f"{c} {w} vs {row[c]:.4f}" for c, w in zip(COLUMNS, want)
            if abs(row[c] - w) > LAST_DIGIT]


@pytest.mark.parametrize("per_hour", [
    pytest.param(36, marks=CLASS2_WAIT_GAP), pytest.param(45, marks=CLASS2_WAIT_GAP), 60, 120])
def test_call_centre_distinct_service_rows(per_hour):
    row = table_row(solve(call_centre(per_hour)))
    misses = row_misses(row, DISTINCT_ROWS[per_hour])
    check(2, f"distinct service rates, {per_hour}/hr", not misses, ", ".join(misses))


@pytest.mark.parametrize("per_hour", [
    pytest.param(36, marks=CLASS2_WAIT_GAP), pytest.param(45, marks=CLASS2_WAIT_GAP), 60, 120])
def test_call_centre_pooled_service_rows(per_hour):
    cfg = pooled_service(call_centre(per_hour))
    assert 1 / cfg.mu[0] == pytest.approx(336.40, abs=0.005)
    row = table_row(measures_mmk(mmk.solve_mmk_equal_mu(cfg), cfg))
    misses = row_misses(row, POOLED_ROWS[per_hour])
    check(3, f"pooled service rate, {per_hour}/hr", not misses, ", ".join(misses))


# --- 4: heavy overload --------------------------------------------------------------

@pytest.fixture(scope="module")
def overload():
    return {kind: solve(two_class(kind, 1000)) for kind in ("positive", "negative")}


def test_overload_throughput_and_service_time(overload):
    pos, neg = overload["positive"], overload["negative"]
    ok = (abs(pos.throughput / 5 - 1) <= 0.02 and abs(pos.avg_service_time_served - 1) <= 0.02
          and abs(neg.throughput / 10 - 1) <= 0.02
          and abs(neg.avg_service_time_served / 0.5 - 1) <= 0.02)
    check(4, "overload throughput and service time", ok,
          f"positive {pos.throughput:.4f}/{pos.avg_service_time_served:.5f}, "
          f"negative {neg.throughput:.4f}/{neg.avg_service_time_served:.5f}")


@pytest.mark.xfail(strict=True, reason="class 2 is the more impatient class in the positive "
                                       "system; its share of served is 0.006, not 0.959")
def test_overload_share_of_patient_class(overload):
    share = overload["positive"].class2_share_of_served
    check(4, "overload class-2 share of served", abs(share - 0.959) <= 0.001, f"{share:.5f}")


# --- 5: reductions to single-class and equal-rate solvers ---------------------------

def single_class_configs(n=20, seed=5):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        k = (1, 3, 5, 10)[i % 4]
        mu, theta = rng.uniform(0.5, 3.0), rng.uniform(0.2, 3.0)
        lam = rng.uniform(0.2, 1.5) * k * mu
        out.append(mmk_config(k, (lam, 0.0), (mu, rng.uniform(0.5, 3.0)),
                              (theta, rng.uniform(0.2, 3.0))))
    return out


def equal_rate_configs(n=20, seed=6):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        k = (2, 3, 5, 10)[i % 4]
        mu = rng.uniform(0.5, 3.0)
        lam = rng.uniform(0.2, 1.5) * k * mu * rng.dirichlet((2, 2))
        out.append(mmk_config(k, tuple(lam), (mu, mu), tuple(rng.uniform(0.2, 3.0, 2))))
    return out


def rel(a, b):
    return abs(a - b) / abs(b) if b else abs(a)


def test_single_class_matches_erlang_a():
    worst = 0.0
    for cfg in single_class_configs():
        r = solve(cfg).class1
        ref = erlang_a(lam=cfg.lam[0], mu=cfg.mu[0], theta=cfg.theta[0], servers=cfg.servers)
        worst = max(worst, rel(r.p_serve, ref.p_serve), rel(r.awt, ref.awt), rel(r.lq, ref.lq))
    check(5, "single class vs Erlang-A (20 configs)", worst <= 1e-8, f"worst {worst:.2e}")


def test_equal_rates_match_scalar_solver():
    worst = 0.0
    for cfg in equal_rate_configs():
        a = measures_mmk(mmk.solve_mmk(cfg), cfg)
        b = measures_mmk(mmk.solve_mmk_equal_mu(cfg), cfg)
        for c, d in zip(a.classes, b.classes):
            worst = max(worst, rel(c.p_serve, d.p_serve), rel(c.awt, d.awt), rel(c.lq, d.lq))
    check(5, "equal service rates vs scalar solver (20 configs)", worst <= 1e-9,
          f"worst {worst:.2e}")


# --- 6: patience matched to service in the single-server model ----------------------

def matched_service(rng, mean):
    kind = rng.integers(4)
    if kind == 0:
        return Exponential(1 / mean)
    if kind == 1:
        return Deterministic(mean)
    if kind == 2:
        n = int(rng.integers(2, 5))
        return Erlang(n, n / mean)
    p = rng.uniform(0.2, 0.8)
    r1 = rng.uniform(0.3, 3.0) / mean
    # second rate fixed by the mean: p/r1 + (1-p)/r2 = mean
    rest = mean - p / r1
    if rest <= 0:
        return Exponential(1 / mean)
    return HyperExponential((p, 1 - p), (r1, (1 - p) / rest))


def test_single_server_in_system_count_with_matched_patience():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10):
        classes = []
        for _ in range(2):
            theta = rng.uniform(0.3, 3.0)
            svc = matched_service(rng, 1 / theta)
            classes.append(ClassParams(rng.uniform(0.1, 2.0) * theta, svc, Exponential(theta)))
        cfg = Mg1Config(*classes)
        r = solve(cfg)
        for c, cls in zip(r.classes, cfg.classes):
            worst = max(worst, rel(c.l_total, cls.arrival_rate * cls.service.mean()))
    check(6, "E(L_i) = lambda_i / theta_i (10 configs)", worst <= 1e-8, f"worst {worst:.2e}")


# --- 7: simulation cross-validation -------------------------------------------------

def single(l1, l2, s1, s2, t1, t2):
    return Mg1Config(ClassParams(l1, s1, Exponential(t1)), ClassParams(l2, s2, Exponential(t2)))


SIM_SYSTEMS = [
    mmk_config(2, (0.5, 0.4), (1.0, 1.5), (0.8, 1.2)),
    mmk_config(5, (10, 10), (1, 2), (1.5, 1.5)),
    mmk_config(5, (10, 10), (1, 2), (1, 2)),
    mmk_config(3, (0.6, 0.9), (0.7, 1.4), (2.0, 0.5)),
    mmk_config(8, (9, 6), (1.2, 0.8), (0.4, 1.1)),
    mmk_config(4, (1.0, 5.0), (2.0, 0.5), (0.3, 3.0)),
    single(0.3, 0.2, Exponential(1.5), Exponential(2.0), 1.0, 0.7),
    single(0.4, 0.3, Deterministic(1.0), Deterministic(0.5), 0.6, 1.3),
    single(1.2, 0.9, Deterministic(0.8), Exponential(1.5), 1.0, 2.0),
    single(0.5, 0.3, HyperExponential((0.3, 0.7), (0.4, 3.0)), Erlang(3, 4.0), 0.9, 0.5),
    single(1.5, 1.0, HyperExponential((0.5, 0.5), (0.8, 4.0)), Deterministic(0.6), 0.7, 1.5),
    single(0.2, 2.0, Erlang(2, 3.0), HyperExponential((0.6, 0.4), (1.0, 5.0)), 0.4, 2.5),
]
SIM_FIELDS = [f"class{c}_{f}" for c in (1, 2) for f in ("p_serve", "awt", "lq")]
SIM_REPLICATIONS = 10


@pytest.fixture(scope="module")
def sim_runs():
    start = time.perf_counter()
    runs = []
    for i, system in enumerate(SIM_SYSTEMS):
        exact = solve(system).flat()
        est = simulate(SimConfig(system, horizon=1_000_000, replications=SIM_REPLICATIONS,
                                 seed=2024 + i))
        runs.append((exact, est))
    return runs, time.perf_counter() - start


def coverage(runs, widen=1.0):
    covered, notes = 0, []
    for i, (exact, est) in enumerate(runs):
        outside = []
        for name in SIM_FIELDS:
            m, h = est.interval(name)
            if abs(exact[name] - m) > widen * h:
                outside.append(f"{name} {abs(exact[name] - m) / h:.2f}hw")
        covered += not outside
        if outside:
            notes.append(f"#{i}: {', '.join(outside)}")
    return covered, "; ".join(notes)


@pytest.mark.xfail(strict=True, reason="six fields per config each at 95% make a config covered "
                                       "only ~80% of the time; the two misses are 1.16 and 1.11 "
                                       "half-widths out")
def test_simulation_per_field_intervals_cover_analytic_values(sim_runs):
    runs, elapsed = sim_runs
    covered, notes = coverage(runs)
    check(7, "per-field 95% intervals", covered >= 11 and elapsed < 300,
          f"{covered}/12 covered, simulation {elapsed:.0f}s; {notes}")


def test_simulation_joint_intervals_cover_analytic_values(sim_runs):
    # simultaneous 95% over the six fields of a config (Bonferroni), so that
    # each config is one 95% event as the 11-of-12 allowance presumes
    runs, elapsed = sim_runs
    df = SIM_REPLICATIONS - 1
    widen = stats.t.ppf(1 - 0.05 / (2 * len(SIM_FIELDS)), df) / stats.t.ppf(0.975, df)
    covered, notes = coverage(runs, widen)
    check(7, "simultaneous 95% intervals per config", covered >= 11 and elapsed < 300,
          f"{covered}/12 covered, simulation {elapsed:.0f}s; {notes}")


# --- 8: invariant suite ---------------------------------------------------------------

FAILURES = []


@settings(max_examples=200, deadline=None, database=None)
@given(inv.configs())
def _invariants(config):
    try:
        inv.check_all(config)
    except Exception as exc:
        FAILURES.append(f"{config}: {exc!r}")
        raise


def test_invariants_over_random_configurations():
    FAILURES.clear()
    try:
        _invariants()
    finally:
        check(8, "invariants over 200 random configurations", not FAILURES,
              FAILURES[0] if FAILURES else "")


# --- 9: shapes along the load sweep ---------------------------------------------------

def test_load_sweep_shapes():
    grid = np.linspace(6, 20, 15)
    curves = {kind: [solve(two_class(kind, lam / 2)) for lam in grid]
              for kind in ("base", "positive", "negative")}
    thr = np.array([r.throughput for r in curves["positive"]])
    peak = int(np.argmax(thr))
    rises_then_falls = 0 < peak < len(grid) - 1
    base_ast = np.array([r.avg_service_time_served for r in curves["base"]])
    flat_base = np.ptp(base_ast) <= 1e-9
    pos_ast = np.diff([r.avg_service_time_served for r in curves["positive"]])
    neg_ast = np.diff([r.avg_service_time_served for r in curves["negative"]])
    ok = rises_then_falls and flat_base and np.all(pos_ast > 0) and np.all(neg_ast < 0)
    check(9, "load sweep shapes", ok,
          f"throughput peak at {grid[peak]:g}, base AST spread {np.ptp(base_ast):.1e}, "
          f"positive AST increasing {bool(np.all(pos_ast > 0))}, "
          f"negative AST decreasing {bool(np.all(neg_ast < 0))}")
