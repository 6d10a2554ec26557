"""Parameter types shared by the analytic solvers and the simulator.

Service and patience distributions are restricted to families with a
closed-form Laplace-Stieltjes transform (LST).  All methods accept scalars
or numpy arrays for the transform argument ``s``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

WEIGHT_TOL = 1e-12


def _check_s(s, strict=False):
    arr = np.asarray(s, dtype=float)
    if strict:
        if np.any(arr <= 0):
            raise ValueError(f"transform argument must be > 0, got {s!r}")
    elif np.any(arr < 0):
        raise ValueError(f"transform argument must be >= 0, got {s!r}")
    return arr


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


class ServiceModel:
    """Base class for a nonnegative distribution with a closed-form LST."""

    def mean(self) -> float:
        raise NotImplementedError

    def lst(self, s):
        raise NotImplementedError

    def lst_derivative(self, s):
        raise NotImplementedError

    def one_minus_lst(self, s):
        """``1 - lst(s)`` evaluated without cancellation where possible."""
        return 1.0 - self.lst(s)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Exponential(ServiceModel):
    rate: float

    def __post_init__(self):
        if not self.rate > 0 or not np.isfinite(self.rate):
            raise ValueError(f"exponential rate must be positive, got {self.rate}")

    def mean(self):
        return 1.0 / self.rate

    def lst(self, s):
        s = _check_s(s)
        return _scalar(self.rate / (self.rate + s))

    def lst_derivative(self, s):
        s = _check_s(s)
        return _scalar(-self.rate / (self.rate + s) ** 2)

    def one_minus_lst(self, s):
        s = _check_s(s)
        return _scalar(s / (self.rate + s))

    def sample(self, rng, size):
        return rng.exponential(1.0 / self.rate, size)

    def to_dict(self):
        return {"type": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class Deterministic(ServiceModel):
    duration: float

    def __post_init__(self):
        if not self.duration > 0 or not np.isfinite(self.duration):
            raise ValueError(f"duration must be positive, got {self.duration}")

    def mean(self):
        return self.duration

    def lst(self, s):
        s = _check_s(s)
        return _scalar(np.exp(-s * self.duration))

    def lst_derivative(self, s):
        s = _check_s(s)
        return _scalar(-self.duration * np.exp(-s * self.duration))

    def one_minus_lst(self, s):
        s = _check_s(s)
        return _scalar(-np.expm1(-s * self.duration))

    def sample(self, rng, size):
        return np.full(size, self.duration)

    def to_dict(self):
        return {"type": "deterministic", "duration": self.duration}


@dataclass(frozen=True)
class HyperExponential(ServiceModel):
    weights: tuple
    rates: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        r = np.asarray(self.rates, dtype=float)
        if w.ndim != 1 or w.shape != r.shape or w.size == 0:
            raise ValueError("weights and rates must be equal-length 1-d sequences")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights must be nonnegative and sum to 1, got {self.weights}")
        if np.any(~(r > 0)) or not np.all(np.isfinite(r)):
            raise ValueError(f"rates must be positive, got {self.rates}")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "rates", tuple(float(x) for x in r))

    @property
    def _w(self):
        return np.asarray(self.weights)

    @property
    def _r(self):
        return np.asarray(self.rates)

    def mean(self):
        return float(np.sum(self._w / self._r))

    def _terms(self, s):
        s = _check_s(s)
        return s[..., None], self._w, self._r

    def lst(self, s):
        x, w, r = self._terms(s)
        return _scalar(np.sum(w * r / (r + x), axis=-1))

    def lst_derivative(self, s):
        x, w, r = self._terms(s)
        return _scalar(-np.sum(w * r / (r + x) ** 2, axis=-1))

    def one_minus_lst(self, s):
        x, w, r = self._terms(s)
        return _scalar(np.sum(w * x / (r + x), axis=-1))

    def sample(self, rng, size):
        branch = rng.choice(len(self.weights), size=size, p=self._w)
        return rng.exponential(1.0, size) / self._r[branch]

    def to_dict(self):
        return {"type": "hyperexponential", "weights": list(self.weights),
                "rates": list(self.rates)}


@dataclass(frozen=True)
class Erlang(ServiceModel):
    phases: int
    rate: float

    def __post_init__(self):
        if int(self.phases) != self.phases or self.phases < 1:
            raise ValueError(f"phases must be a positive integer, got {self.phases}")
        if not self.rate > 0 or not np.isfinite(self.rate):
            raise ValueError(f"rate must be positive, got {self.rate}")
        object.__setattr__(self, "phases", int(self.phases))

    def mean(self):
        return self.phases / self.rate

    def lst(self, s):
        s = _check_s(s)
        return _scalar((self.rate / (self.rate + s)) ** self.phases)

    def lst_derivative(self, s):
        s = _check_s(s)
        n, r = self.phases, self.rate
        return _scalar(-n * r ** n / (r + s) ** (n + 1))

    def one_minus_lst(self, s):
        s = _check_s(s)
        # 1 - (r/(r+s))^n = -expm1(n*log1p(-s/(r+s)))
        return _scalar(-np.expm1(self.phases * np.log1p(-s / (self.rate + s))))

    def sample(self, rng, size):
        return rng.gamma(self.phases, 1.0 / self.rate, size)

    def to_dict(self):
        return {"type": "erlang", "phases": self.phases, "rate": self.rate}


Patience = Union[Exponential, HyperExponential]


def lst(model: ServiceModel, s):
    return model.lst(s)


def lst_derivative(model: ServiceModel, s):
    return model.lst_derivative(s)


def patience_branches(patience) -> tuple[np.ndarray, np.ndarray]:
    """(weights, rates) of the exponential mixture describing a patience law."""
    if isinstance(patience, Exponential):
        return np.array([1.0]), np.array([patience.rate])
    if isinstance(patience, HyperExponential):
        return np.asarray(patience.weights), np.asarray(patience.rates)
    raise TypeError(f"patience must be Exponential or HyperExponential, got {type(patience).__name__}")


@dataclass(frozen=True)
class ClassParams:
    arrival_rate: float
    service: ServiceModel
    patience: Patience

    def __post_init__(self):
        if not self.arrival_rate >= 0 or not np.isfinite(self.arrival_rate):
            raise ValueError(f"arrival rate must be >= 0, got {self.arrival_rate}")
        if not isinstance(self.service, ServiceModel):
            raise TypeError("service must be a ServiceModel")
        patience_branches(self.patience)

    @property
    def tau(self) -> float:
        return self.service.mean()

    def with_arrival_rate(self, rate: float) -> "ClassParams":
        return ClassParams(rate, self.service, self.patience)


def equilibrium_factor(cls: ClassParams, s):
    """lambda * (1 - G(s)) / s for a class; tends to lambda*tau as s -> 0."""
    s = _check_s(s, strict=True)
    lam = cls.arrival_rate
    svc = cls.service
    scale = 1.0 / svc.mean()
    small = s < 1e-8 * scale
    safe = np.where(small, 1.0, s)
    out = np.where(small, lam * svc.mean(), lam * svc.one_minus_lst(safe) / safe)
    return _scalar(out)


def equilibrium_factor_derivative(cls: ClassParams, s):
    """d/ds of :func:`equilibrium_factor`, for s > 0."""
    s = _check_s(s, strict=True)
    svc = cls.service
    lam = cls.arrival_rate
    if isinstance(svc, Exponential):
        return _scalar(-lam / (svc.rate + s) ** 2)
    return _scalar(lam * (-svc.lst_derivative(s) * s - svc.one_minus_lst(s)) / s ** 2)


@dataclass(frozen=True)
class Mg1Config:
    class1: ClassParams
    class2: ClassParams
    tolerance: float = 1e-12
    max_diagonal: int = 10000

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_diagonal < 1:
            raise ValueError("max_diagonal must be positive")

    @property
    def classes(self) -> tuple[ClassParams, ClassParams]:
        return (self.class1, self.class2)

    @property
    def servers(self) -> int:
        return 1


@dataclass(frozen=True)
class MmkConfig:
    servers: int
    class1: ClassParams
    class2: ClassParams
    tolerance: float = 1e-12
    max_diagonal: int = 10000

    def __post_init__(self):
        if int(self.servers) != self.servers or self.servers < 1:
            raise ValueError(f"servers must be a positive integer, got {self.servers}")
        for c in self.classes:
            if not isinstance(c.service, Exponential):
                raise ValueError("the multi-server model needs exponential service times")
            if not isinstance(c.patience, Exponential):
                raise ValueError("the multi-server model needs exponential patience times")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_diagonal < 1:
            raise ValueError("max_diagonal must be positive")

    @property
    def classes(self) -> tuple[ClassParams, ClassParams]:
        return (self.class1, self.class2)

    @property
    def lam(self) -> tuple[float, float]:
        return (self.class1.arrival_rate, self.class2.arrival_rate)

    @property
    def mu(self) -> tuple[float, float]:
        return (self.class1.service.rate, self.class2.service.rate)

    @property
    def theta(self) -> tuple[float, float]:
        return (self.class1.patience.rate, self.class2.patience.rate)

    def swapped(self) -> "MmkConfig":
        return MmkConfig(self.servers, self.class2, self.class1, self.tolerance, self.max_diagonal)

    def as_mg1(self) -> Mg1Config:
        return Mg1Config(self.class1, self.class2, self.tolerance, self.max_diagonal)


def mmk(servers, lam, mu, theta, tolerance=1e-12, max_diagonal=10000) -> MmkConfig:
    """Shorthand: build an :class:`MmkConfig` from rate pairs."""
    classes = [ClassParams(l, Exponential(m), Exponential(t)) for l, m, t in zip(lam, mu, theta)]
    return MmkConfig(servers, classes[0], classes[1], tolerance, max_diagonal)


# --- JSON (de)serialization -------------------------------------------------

def distribution_from_dict(d: dict) -> ServiceModel:
    kind = d.get("type")
    if kind == "exponential":
        if "rate" in d:
            return Exponential(float(d["rate"]))
        return Exponential(1.0 / float(d["mean"]))
    if kind == "deterministic":
        return Deterministic(float(d["duration"]))
    if kind == "hyperexponential":
        return HyperExponential(tuple(d["weights"]), tuple(d["rates"]))
    if kind == "erlang":
        if "rate" in d:
            return Erlang(int(d["phases"]), float(d["rate"]))
        return Erlang(int(d["phases"]), int(d["phases"]) / float(d["mean"]))
    raise ValueError(f"unknown distribution type {kind!r}")


def class_from_dict(d: dict) -> ClassParams:
    return ClassParams(float(d["arrival_rate"]), distribution_from_dict(d["service"]),
                       distribution_from_dict(d["patience"]))


def class_to_dict(c: ClassParams) -> dict:
    return {"arrival_rate": c.arrival_rate, "service": c.service.to_dict(),
            "patience": c.patience.to_dict()}
