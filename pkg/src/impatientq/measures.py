"""Steady-state performance measures from solved transforms.

Everything is evaluated at the patience rates: P(T > W) = E exp(-theta W),
E min(W, T) = P(T < W) / theta and E(W; T > W) = -psi'(theta).
P(T < W) comes straight from the solvers so light loads keep full accuracy.
Percentages are kept as fractions.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .mg1 import Mg1Solution
from .mmk import MmkSolution
from .model import Mg1Config, MmkConfig, patience_branches


@dataclass(frozen=True)
class ClassReport:
    p_serve: float
    awt: float
    wait_served: float
    wait_reneged: float
    lq: float
    l_total: float
    throughput: float
    reneging_rate: float
    busy_servers: float


@dataclass(frozen=True)
class PerformanceReport:
    class1: ClassReport
    class2: ClassReport
    utilization: float
    throughput: float
    reneging_rate: float
    pct_served_all: float
    overall_awt: float
    wait_served_all: float
    wait_reneged_all: float
    avg_service_time_served: float
    class2_share_of_served: float

    @property
    def classes(self) -> tuple[ClassReport, ClassReport]:
        return (self.class1, self.class2)

    def to_dict(self) -> dict:
        return asdict(self)

    def flat(self) -> dict:
        """Single-level mapping with ``class1_``/``class2_`` prefixes."""
        out = {}
        for name in ("class1", "class2"):
            for f in fields(ClassReport):
                out[f"{name}_{f.name}"] = getattr(getattr(self, name), f.name)
        for f in fields(self):
            if f.name not in ("class1", "class2"):
                out[f.name] = getattr(self, f.name)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PerformanceReport":
        d = dict(d)
        c1 = ClassReport(**d.pop("class1"))
        c2 = ClassReport(**d.pop("class2"))
        return cls(c1, c2, **d)


def _ratio(num, den):
    return num / den if den > 0 else 0.0


def _class_report(lam, p_serve, miss, awt, w_served_joint, busy):
    """One class from P(T > W), P(T < W), E min(W, T) and E(W; T > W).

    The smaller of the two probabilities is the accurate one; the other is
    taken as its complement.
    """
    if lam == 0:
        # no arrivals: every measure of the class is reported as zero
        return ClassReport(*([0.0] * len(fields(ClassReport))))
    miss = min(max(miss, 0.0), 1.0)
    p_serve = min(max(p_serve, 0.0), 1.0)
    if miss <= 0.5:
        p_serve = 1.0 - miss
    else:
        miss = 1.0 - p_serve
    wait_served = _ratio(w_served_joint, p_serve)
    wait_reneged = _ratio(awt - w_served_joint, miss)
    lq = lam * awt
    return ClassReport(
        p_serve=p_serve, awt=awt, wait_served=wait_served, wait_reneged=wait_reneged,
        lq=lq, l_total=lq + busy, throughput=lam * p_serve,
        reneging_rate=lam * miss, busy_servers=busy)


def _aggregate(lams, reports, service_means, servers):
    c1, c2 = reports
    thr = c1.throughput + c2.throughput
    total = sum(lams)
    served_work = sum(c.throughput * m for c, m in zip(reports, service_means))
    reneged = sum(c.reneging_rate for c in reports)
    util = sum(c.busy_servers for c in reports) / servers
    if 1.0 < util < 1.0 + 1e-9:
        util = 1.0  # rounding in p_serve at full load
    return dict(
        utilization=util,
        throughput=thr,
        reneging_rate=c1.reneging_rate + c2.reneging_rate,
        pct_served_all=_ratio(thr, total),
        overall_awt=_ratio(sum(l * c.awt for l, c in zip(lams, reports)), total),
        wait_served_all=_ratio(sum(c.throughput * c.wait_served for c in reports), thr),
        wait_reneged_all=_ratio(sum(c.reneging_rate * c.wait_reneged for c in reports), reneged),
        avg_service_time_served=_ratio(served_work, thr),
        class2_share_of_served=_ratio(c2.throughput, thr),
    )


def measures_mmk(solution: MmkSolution, config: MmkConfig) -> PerformanceReport:
    lams, mus, ths = config.lam, config.mu, config.theta
    reports = []
    for i in range(2):
        p, miss = solution.p_serve(i), solution.miss(i)
        rep = _class_report(lams[i], p, miss, miss / ths[i], solution.served_wait(i), 0.0)
        reports.append(replace(rep, busy_servers=rep.throughput / mus[i],
                               l_total=rep.lq + rep.throughput / mus[i]))
    agg = _aggregate(lams, reports, [1 / m for m in mus], config.servers)
    return PerformanceReport(reports[0], reports[1], **agg)


def measures_mg1(solution: Mg1Solution, config: Mg1Config) -> PerformanceReport:
    reports = []
    lams = [c.arrival_rate for c in config.classes]
    for cls in config.classes:
        w, th = patience_branches(cls.patience)
        psi = np.array([solution.psi(t) for t in th])
        dpsi = np.array([solution.dpsi(t) for t in th])
        miss = np.array([solution.miss(t) for t in th])
        rep = _class_report(cls.arrival_rate, float(np.sum(w * psi)), float(np.sum(w * miss)),
                            float(np.sum(w * miss / th)), 0.0 - float(np.sum(w * dpsi)), 0.0)
        busy = rep.throughput * cls.tau
        reports.append(replace(rep, busy_servers=busy, l_total=rep.lq + busy))
    agg = _aggregate(lams, reports, [c.tau for c in config.classes], 1)
    return PerformanceReport(reports[0], reports[1], **agg)


def solve(config) -> PerformanceReport:
    """Solve either model and return its performance report."""
    return solve_with_diagnostics(config)[0]


def solve_with_diagnostics(config) -> tuple[PerformanceReport, dict]:
    """Report plus truncation and rounding diagnostics of the solve."""
    from .mg1 import solve_mg1
    from .mmk import solve_mmk
    if isinstance(config, MmkConfig):
        sol = solve_mmk(config)
        report = measures_mmk(sol, config)
        extended, rounding, bits = sol.extended, sol.rounding_bound, sol.precision_bits
    else:
        sol = solve_mg1(config)
        report = measures_mg1(sol, config)
        extended, rounding, bits = False, 0.0, 53
    diag = {"truncation_diagonal_used": int(sol.truncation_diagonal_used),
            "tail_bound": float(sol.tail_bound),
            "rounding_bound": float(rounding),
            "precision_bits": int(bits),
            "extended_precision": bool(extended)}
    return report, diag
