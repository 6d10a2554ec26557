"""Single-server two-class M/G/1+M queue.

The stationary LST of the virtual wait solves
psi(s) = p0 + sum_i psi(s + theta_i) H_i(s), with H_i the arrival-weighted
equilibrium-excess transform of class i service.  Iterating the equation
gives psi(s) = p0 * c(s) where c(s) sums products of H factors over
monotone lattice paths; hyper-exponential patience adds one lattice
direction per distinct branch rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._pykernels import stop_rule
from .model import Mg1Config, equilibrium_factor, equilibrium_factor_derivative, patience_branches

MAX_DIRECTIONS = 4
RESCALE_AT = 1e200


class NonConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScalarSeries:
    c: float            # scaled value; the series is exp(log_scale) * c
    dc: float           # scaled derivative
    log_scale: float
    diagonals: int
    tail_bound: float
    converged: bool
    path: float = 0.0   # scaled sum over m != 0, i.e. c - 1 without cancellation

    @property
    def value(self) -> float:
        return math.exp(self.log_scale) * self.c if self.c else 0.0

    @property
    def derivative(self) -> float:
        return math.exp(self.log_scale) * self.dc if self.dc else 0.0


def _merge_directions(rates, factors, dfactors):
    merged = {}
    for r, f, df in zip(rates, factors, dfactors):
        merged.setdefault(float(r), []).append((f, df))
    out_r, out_f, out_df = [], [], []
    for r, fs in merged.items():
        out_r.append(r)
        out_f.append(lambda x, fs=fs: sum(f(x) for f, _ in fs))
        out_df.append(lambda x, fs=fs: sum(df(x) for _, df in fs))
    return np.array(out_r), out_f, out_df


def scalar_series(rates, factors, dfactors, s, tol=1e-12, max_diag=10000, min_diag=0):
    """Sum over lattice paths of products of step factors, with derivative.

    A step in direction ``l`` from the point at abscissa ``x`` multiplies by
    ``factors[l](x)``; the abscissa of lattice point ``m`` is
    ``s + m . rates``.  Directions with equal rates are merged.
    """
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    rates, factors, dfactors = _merge_directions(rates, factors, dfactors)
    d = len(rates)
    if d > MAX_DIRECTIONS:
        raise ValueError(f"at most {MAX_DIRECTIONS} distinct patience rates supported, got {d}")
    base = max_diag + 2
    powers = base ** np.arange(d, dtype=np.int64)
    pts = np.zeros((1, d), dtype=np.int64)
    keys = np.zeros(1, dtype=np.int64)
    c = np.ones(1)
    dc = np.zeros(1)
    total, dtotal, path = 1.0, 0.0, 0.0
    # convergence is judged against the path terms alone, which are what
    # light-load measures depend on
    tot_c, tot_p = 0.0, 0.0
    m_prev, mp_prev = 1.0, 0.0
    log_scale = 0.0
    tail = 0.0
    converged = False
    n = 0
    while n < max_diag:
        n += 1
        x = s + pts @ rates
        cand_keys = (keys[None, :] + powers[:, None]).ravel()
        new_keys, inverse = np.unique(cand_keys, return_inverse=True)
        inverse = inverse.reshape(d, -1)
        c_new = np.zeros(len(new_keys))
        dc_new = np.zeros(len(new_keys))
        for l in range(d):
            f = factors[l](x)
            df = dfactors[l](x)
            np.add.at(c_new, inverse[l], f * c)
            np.add.at(dc_new, inverse[l], f * dc + df * c)
        # coordinates of the unique keys
        new_pts = (new_keys[:, None] // powers[None, :]) % base
        m_c = float(np.abs(c_new).sum())
        m_p = float(np.abs(dc_new).sum())
        path += float(c_new.sum())
        total += float(c_new.sum())
        dtotal += float(dc_new.sum())
        tot_c += m_c
        tot_p += m_p
        if tot_c > RESCALE_AT or tot_p > RESCALE_AT:
            f = 1.0 / max(tot_c, tot_p)
            c_new *= f
            dc_new *= f
            total *= f
            dtotal *= f
            path *= f
            tot_c *= f
            tot_p *= f
            m_c *= f
            m_p *= f
            m_prev *= f
            mp_prev *= f
            log_scale -= math.log(f)
        pts, keys, c, dc = new_pts, new_keys, c_new, dc_new
        if n >= min_diag:
            stop, tail = stop_rule(m_c, m_prev, tot_c, m_p, mp_prev, tot_p, tol)
            if stop:
                converged = True
                break
        m_prev, mp_prev = m_c, m_p
    return ScalarSeries(total, dtotal, log_scale, n, tail, converged, path)


def _directions(config: Mg1Config):
    """Lattice directions: one per patience branch, weighted by its probability."""
    rates, factors, dfactors = [], [], []
    for cls in config.classes:
        w, th = patience_branches(cls.patience)
        for p, t in zip(w, th):
            rates.append(float(t))
            factors.append(lambda x, cls=cls, p=p: p * equilibrium_factor(cls, x))
            dfactors.append(lambda x, cls=cls, p=p: p * equilibrium_factor_derivative(cls, x))
    return rates, factors, dfactors


def c_series(config: Mg1Config, s: float, min_diagonal: int = 0) -> ScalarSeries:
    rates, factors, dfactors = _directions(config)
    return scalar_series(rates, factors, dfactors, s, config.tolerance,
                         config.max_diagonal, min_diagonal)


@dataclass(frozen=True)
class Mg1Solution:
    p0: float
    psi_at: dict = field(default_factory=dict)
    dpsi_at: dict = field(default_factory=dict)
    truncation_diagonal_used: int = 0
    tail_bound: float = 0.0
    miss_at: dict = field(default_factory=dict)   # 1 - psi, computed directly

    def psi(self, theta: float) -> float:
        return self.psi_at[float(theta)]

    def miss(self, theta: float) -> float:
        """Probability that a patience of rate ``theta`` runs out before service."""
        return self.miss_at[float(theta)]

    def dpsi(self, theta: float) -> float:
        return self.dpsi_at[float(theta)]


def solve_mg1(config: Mg1Config, min_diagonal: int = 0) -> Mg1Solution:
    rates = sorted({float(t) for cls in config.classes for t in patience_branches(cls.patience)[1]})
    if sum(c.arrival_rate for c in config.classes) == 0:
        return Mg1Solution(1.0, {t: 1.0 for t in rates}, {t: 0.0 for t in rates},
                           miss_at={t: 0.0 for t in rates})
    series = {t: c_series(config, t, min_diagonal) for t in rates}
    for t, sr in series.items():
        if not sr.converged:
            raise NonConvergenceError(f"c({t}) not converged after {sr.diagonals} diagonals")
    L = max(sr.log_scale for sr in series.values())
    # 1/p0 = 1 + sum_ij p_ij c(theta_ij) lambda_i tau_i, carried in units of exp(L)
    acc = 0.0
    for cls in config.classes:
        w, th = patience_branches(cls.patience)
        for p, t in zip(w, th):
            sr = series[float(t)]
            acc += p * math.exp(sr.log_scale - L) * sr.c * cls.arrival_rate * cls.tau
    denom = math.exp(-L) + acc
    p0 = math.exp(-L) / denom
    psi_at, dpsi_at, miss_at = {}, {}, {}
    for t, sr in series.items():
        scale = math.exp(sr.log_scale - L) / denom
        psi_at[t] = scale * sr.c
        dpsi_at[t] = scale * sr.dc
        # 1 - psi = (acc - (c - 1)) / denom; both terms vanish with the load
        miss_at[t] = max(acc / denom - scale * sr.path, 0.0)
    if not 0 < p0 <= 1 and not (p0 == 0 and L > 700):
        raise NonConvergenceError(f"p0={p0} outside (0, 1]; truncation failure")
    return Mg1Solution(p0, psi_at, dpsi_at,
                       max(sr.diagonals for sr in series.values()),
                       max(sr.tail_bound for sr in series.values()), miss_at)
