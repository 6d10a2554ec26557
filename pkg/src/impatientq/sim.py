"""Monte Carlo estimates for two-class FCFS multi-server queues with abandonment.

Each replication draws a fixed number of arrivals.  Waiting times come from
the FCFS recursion on server release times (``kernels.fcfs_waits``): an
arrival waits until the earliest server frees up, and if its patience runs
out first it leaves without ever holding a server.  An event-driven
simulator with an explicit queue (``simulate_events``) is kept as an
independent cross-check of that recursion.
"""
from __future__ import annotations

import heapq
import math
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np
from scipy import stats

from . import kernels
from .measures import ClassReport, PerformanceReport

STREAMS = ("arrivals-1", "arrivals-2", "service-1", "service-2", "patience-1", "patience-2")
THREADS_ENV = "IMPATIENTQ_THREADS"


def thread_count() -> int:
    """Worker threads for replications and sweeps, from ``IMPATIENTQ_THREADS``."""
    raw = os.environ.get(THREADS_ENV, "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(n, 1)


@dataclass(frozen=True)
class SimConfig:
    system: object            # Mg1Config or MmkConfig; only .servers and .classes are used
    horizon: int = 1_000_000  # arrivals per replication
    warmup: float = 0.1       # fraction of arrivals discarded
    replications: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1000:
            raise ValueError(f"horizon must be >= 1000 arrivals, got {self.horizon}")
        if not 0 <= self.warmup < 1:
            raise ValueError(f"warmup must lie in [0, 1), got {self.warmup}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def rng_for(seed: int, replication: int, stream: str) -> np.random.Generator:
    """Generator for one named stream of one replication."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(replication, STREAMS.index(stream)))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class SamplePath:
    """Merged arrivals with their class, service and patience draws."""
    t: np.ndarray
    cls: np.ndarray
    service: np.ndarray
    patience: np.ndarray


def draw_path(system, n: int, seed: int, replication: int) -> SamplePath:
    times, labels = [], []
    for i, c in enumerate(system.classes):
        if c.arrival_rate > 0:
            rng = rng_for(seed, replication, f"arrivals-{i + 1}")
            times.append(np.cumsum(rng.exponential(1.0 / c.arrival_rate, n)))
            labels.append(np.full(n, i, dtype=np.int8))
    if not times:
        empty = np.zeros(0)
        return SamplePath(empty, np.zeros(0, dtype=np.int8), empty, empty)
    t = np.concatenate(times)
    cls = np.concatenate(labels)
    # the first n merged arrivals never need more than n from any one class
    order = np.argsort(t, kind="stable")[:n]
    t, cls = t[order], cls[order]
    svc = np.empty(n)
    pat = np.empty(n)
    for i, c in enumerate(system.classes):
        mask = cls == i
        m = int(mask.sum())
        if m:
            svc[mask] = c.service.sample(rng_for(seed, replication, f"service-{i + 1}"), m)
            pat[mask] = c.patience.sample(rng_for(seed, replication, f"patience-{i + 1}"), m)
    return SamplePath(t, cls, svc, pat)


def _clipped(start, end, lo, hi):
    return float(np.sum(np.clip(np.minimum(end, hi) - np.maximum(start, lo), 0.0, None)))


def _mean(x):
    return float(x.mean()) if x.size else 0.0


def _ratio(a, b):
    return a / b if b > 0 else 0.0


@dataclass(frozen=True)
class Replication:
    report: PerformanceReport
    arrivals: int
    served: int
    reneged: int
    in_system: int


def run_replication(system, horizon: int, warmup: float, seed: int, replication: int) -> Replication:
    path = draw_path(system, horizon, seed, replication)
    n = len(path.t)
    k = int(system.servers)
    if n == 0:
        return Replication(_zero_report(), 0, 0, 0, 0)
    wait, served = kernels.fcfs_waits(path.t, path.service, path.patience, k)
    served = served.astype(bool)
    queued = np.minimum(wait, path.patience)
    start = path.t + wait
    end_service = start + path.service
    first = int(warmup * n)
    t0, t1 = path.t[first], path.t[-1]
    span = t1 - t0
    post = np.arange(n) >= first

    classes = []
    for i in range(2):
        mine = path.cls == i
        sel = mine & post
        cnt = int(sel.sum())
        srv = sel & served
        ren = sel & ~served
        p = _ratio(float(srv.sum()), cnt)
        awt = _mean(queued[sel])
        lq = _ratio(_clipped(path.t[mine], path.t[mine] + queued[mine], t0, t1), span)
        busy = _ratio(_clipped(start[mine & served], end_service[mine & served], t0, t1), span)
        classes.append(ClassReport(
            p_serve=p, awt=awt, wait_served=_mean(wait[srv]),
            wait_reneged=_mean(path.patience[ren]), lq=lq, l_total=lq + busy,
            throughput=_ratio(float(srv.sum()), span),
            reneging_rate=_ratio(float(ren.sum()), span), busy_servers=busy))

    srv_all = post & served
    ren_all = post & ~served
    thr = classes[0].throughput + classes[1].throughput
    report = PerformanceReport(
        classes[0], classes[1],
        utilization=(classes[0].busy_servers + classes[1].busy_servers) / k,
        throughput=thr,
        reneging_rate=classes[0].reneging_rate + classes[1].reneging_rate,
        pct_served_all=_ratio(float(srv_all.sum()), float(post.sum())),
        overall_awt=_mean(queued[post]),
        wait_served_all=_mean(wait[srv_all]),
        wait_reneged_all=_mean(path.patience[ren_all]),
        avg_service_time_served=_mean(path.service[srv_all]),
        class2_share_of_served=_ratio(float((srv_all & (path.cls == 1)).sum()), float(srv_all.sum())),
    )
    # status of every arrival at the last arrival epoch
    done_served = int(np.sum(served & (end_service <= t1)))
    done_reneged = int(np.sum(~served & (path.t + path.patience <= t1)))
    return Replication(report, n, done_served, done_reneged, n - done_served - done_reneged)


def _zero_report() -> PerformanceReport:
    zc = ClassReport(*([0.0] * len(fields(ClassReport))))
    rest = [f for f in fields(PerformanceReport) if f.name not in ("class1", "class2")]
    return PerformanceReport(zc, zc, **{f.name: 0.0 for f in rest})


@dataclass(frozen=True)
class SimEstimate:
    """Means and 95% Student-t half-widths across replications."""
    mean: PerformanceReport
    half_width: PerformanceReport
    replications: tuple

    def interval(self, name: str) -> tuple[float, float]:
        """(mean, half-width) for a flat field name such as ``class1_awt``."""
        return self.mean.flat()[name], self.half_width.flat()[name]

    def covers(self, name: str, value: float) -> bool:
        m, h = self.interval(name)
        return abs(value - m) <= h

    def to_dict(self) -> dict:
        return {"mean": self.mean.to_dict(), "half_width": self.half_width.to_dict(),
                "replications": len(self.replications)}


def _summarize(reps) -> SimEstimate:
    flat = [r.report.flat() for r in reps]
    names = list(flat[0])
    data = np.array([[f[k] for k in names] for f in flat])
    mean = data.mean(axis=0)
    r = len(reps)
    if r > 1:
        half = stats.t.ppf(0.975, r - 1) * data.std(axis=0, ddof=1) / math.sqrt(r)
    else:
        half = np.full(len(names), math.inf)
    return SimEstimate(_unflatten(dict(zip(names, mean))), _unflatten(dict(zip(names, half))),
                       tuple(reps))


def _unflatten(flat: dict) -> PerformanceReport:
    cls = {}
    for name in ("class1", "class2"):
        cls[name] = ClassReport(**{f.name: float(flat[f"{name}_{f.name}"]) for f in fields(ClassReport)})
    rest = {f.name: float(flat[f.name]) for f in fields(PerformanceReport)
            if f.name not in ("class1", "class2")}
    return PerformanceReport(cls["class1"], cls["class2"], **rest)


def simulate(config: SimConfig, threads: int | None = None) -> SimEstimate:
    """Run the replications (concurrently if ``threads`` > 1) and summarize."""
    threads = thread_count() if threads is None else threads
    run = lambda r: run_replication(config.system, config.horizon, config.warmup, config.seed, r)
    if threads > 1 and config.replications > 1:
        with ThreadPoolExecutor(threads) as pool:
            reps = list(pool.map(run, range(config.replications)))
    else:
        reps = [run(r) for r in range(config.replications)]
    return _summarize(reps)


# --- independent event-driven simulator -------------------------------------

def simulate_events(path: SamplePath, servers: int):
    """Event-driven FCFS simulation of a fixed sample path.

    Waiting customers sit in a FIFO queue with their abandonment deadline;
    expired ones are dropped lazily when a server looks for work.  Returns
    ``(wait, served)`` where ``wait`` is the delay to service for served
    customers and the patience for those who left.
    """
    n = len(path.t)
    wait = np.zeros(n)
    served = np.zeros(n, dtype=bool)
    idle = servers
    releases = []          # heap of service completion times
    queue = deque()        # (deadline, index)
    t = path.t.tolist()
    svc = path.service.tolist()
    pat = path.patience.tolist()

    def start(m, now):
        served[m] = True
        wait[m] = now - t[m]
        heapq.heappush(releases, now + svc[m])

    def release_until(now):
        nonlocal idle
        while releases and releases[0] <= now:
            tr = heapq.heappop(releases)
            while queue and queue[0][0] <= tr:
                _, m = queue.popleft()
                wait[m] = pat[m]
            if queue:
                _, m = queue.popleft()
                start(m, tr)
            else:
                idle += 1

    for m in range(n):
        release_until(t[m])
        if idle > 0:
            idle -= 1
            start(m, t[m])
        else:
            queue.append((t[m] + pat[m], m))
    release_until(math.inf)
    while queue:
        _, m = queue.popleft()
        wait[m] = pat[m]
    return wait, served


def virtual_wait_path(path: SamplePath, servers: int):
    """Virtual waiting time just before and just after each arrival.

    The virtual wait is the delay a hypothetical arrival would face: the time
    until the earliest server release.  It jumps only when an arrival that
    will be served claims a server.
    """
    free = [0.0] * servers
    before = np.empty(len(path.t))
    after = np.empty(len(path.t))
    for m, (tm, s, p) in enumerate(zip(path.t.tolist(), path.service.tolist(), path.patience.tolist())):
        v = max(free[0] - tm, 0.0)
        before[m] = v
        if p > v:
            heapq.heapreplace(free, tm + v + s)
        after[m] = max(free[0] - tm, 0.0)
    return before, after
