"""Independent reference computations used by the tests.

``erlang_a`` solves the single-class M/M/k+M queue as a truncated
birth-death chain; ``merge_classes`` collapses a two-class multi-server
configuration whose classes share service and patience rates into one class.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MmkConfig

TAIL_TOL = 1e-12
MAX_TRUNCATION = 1 << 24


class TruncationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ErlangAParams:
    lam: float
    mu: float
    theta: float
    servers: int
    truncation: int = 100_000

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"arrival rate must be >= 0, got {self.lam}")
        if not self.mu > 0 or not self.theta > 0:
            raise ValueError("service and patience rates must be positive")
        if int(self.servers) != self.servers or self.servers < 1:
            raise ValueError(f"servers must be a positive integer, got {self.servers}")
        if self.truncation < 1:
            raise ValueError("truncation must be positive")


@dataclass(frozen=True)
class ErlangAResult:
    p_serve: float
    awt: float
    lq: float
    utilization: float
    truncation: int
    tail_mass: float


def _stationary(lam, mu, theta, k, trunc):
    n = np.arange(1, k + trunc + 1, dtype=float)
    death = np.minimum(n, k) * mu + np.maximum(n - k, 0.0) * theta
    # log p_n - log p_0 accumulated from the ratios p_n / p_{n-1} = lam / death_n
    logp = np.concatenate([[0.0], np.cumsum(np.log(lam) - np.log(death))])
    p = np.exp(logp - logp.max())
    p /= p.sum()
    # geometric bound on the mass beyond the last state
    r = lam / (k * mu + (trunc + 1) * theta)
    tail = p[-1] * r / (1.0 - r) if r < 1 else np.inf
    return p, tail


def erlang_a(params: ErlangAParams | None = None, **kw) -> ErlangAResult:
    """Stationary measures of the M/M/k+M queue.

    Accepts an :class:`ErlangAParams` or its fields as keywords.
    """
    if params is None:
        params = ErlangAParams(**kw)
    lam, mu, theta, k = params.lam, params.mu, params.theta, int(params.servers)
    if lam == 0:
        return ErlangAResult(1.0, 0.0, 0.0, 0.0, 0, 0.0)
    trunc = int(params.truncation)
    while True:
        p, tail = _stationary(lam, mu, theta, k, trunc)
        if tail < TAIL_TOL:
            break
        if trunc >= MAX_TRUNCATION:
            raise TruncationError(f"tail mass {tail:.3g} at truncation {trunc}")
        trunc *= 2
    n = np.arange(len(p))
    queue = float(np.sum(np.maximum(n - k, 0) * p))
    busy = float(np.sum(np.minimum(n, k) * p))
    return ErlangAResult(
        p_serve=1.0 - theta * queue / lam,
        awt=queue / lam,
        lq=queue,
        utilization=busy / k,
        truncation=trunc,
        tail_mass=float(tail),
    )


def merge_classes(config: MmkConfig) -> ErlangAParams:
    """Single-class equivalent of a configuration with identical class rates."""
    (mu1, mu2), (th1, th2) = config.mu, config.theta
    if mu1 != mu2 or th1 != th2:
        raise ValueError("classes differ in service or patience rate; no exact merge")
    return ErlangAParams(sum(config.lam), mu1, th1, config.servers)
