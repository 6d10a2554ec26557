import math

import numpy as np
import pytest

from impatientq.model import (ClassParams, Deterministic, Erlang, Exponential, HyperExponential,
                              Mg1Config, MmkConfig, class_from_dict, class_to_dict,
                              equilibrium_factor, equilibrium_factor_derivative, lst,
                              lst_derivative, mmk, patience_branches)

MODELS = [Exponential(1.3), Deterministic(0.7), HyperExponential((0.3, 0.7), (0.5, 4.0)),
          Erlang(3, 2.5)]


def test_lst_examples():
    assert lst(Exponential(1.0), 1.0) == 0.5
    assert lst(Deterministic(1.0), 1.0) == pytest.approx(0.367879, abs=1e-6)
    for m in MODELS:
        assert lst(m, 0.0) == 1.0


def test_lst_derivative_examples():
    assert lst_derivative(Exponential(1.0), 0.0) == -1.0
    assert lst_derivative(Exponential(2.0), 2.0) == -0.125
    assert lst_derivative(Deterministic(1.0), 1.0) == pytest.approx(-math.exp(-1))


@pytest.mark.parametrize("m", MODELS, ids=lambda m: type(m).__name__)
def test_derivative_at_zero_is_minus_mean(m):
    assert lst_derivative(m, 0.0) == pytest.approx(-m.mean(), rel=1e-14)


@pytest.mark.parametrize("m", MODELS, ids=lambda m: type(m).__name__)
@pytest.mark.parametrize("s", [0.1, 1.0, 10.0])
def test_derivative_matches_finite_difference(m, s):
    h = 1e-5 * s
    fd = (m.lst(s + h) - m.lst(s - h)) / (2 * h)
    assert m.lst_derivative(s) == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("m", MODELS, ids=lambda m: type(m).__name__)
def test_lst_is_decreasing_and_bounded(m):
    s = np.linspace(0, 20, 201)
    v = m.lst(s)
    assert np.all(np.diff(v) < 0)
    assert np.all((v > 0) & (v <= 1))
    assert np.all(m.lst_derivative(s) < 0)


@pytest.mark.parametrize("m", MODELS, ids=lambda m: type(m).__name__)
def test_negative_argument_rejected(m):
    with pytest.raises(ValueError):
        m.lst(-0.1)
    with pytest.raises(ValueError):
        m.lst_derivative(-1.0)


def test_equilibrium_factor_examples():
    assert equilibrium_factor(ClassParams(1.0, Exponential(1.0), Exponential(1.0)), 1.0) == 0.5
    c = ClassParams(2.0, Deterministic(1.0), Exponential(1.0))
    assert equilibrium_factor(c, 1.0) == pytest.approx(1.264241, abs=1e-6)
    c = ClassParams(1.0, Exponential(1.0), Exponential(1.0))
    assert equilibrium_factor(c, 1e-12) == 1.0
    assert equilibrium_factor(c, 1e-6) == pytest.approx(1.0, rel=1e-5)


@pytest.mark.parametrize("m", MODELS, ids=lambda m: type(m).__name__)
@pytest.mark.parametrize("s", [0.01, 0.5, 3.0, 40.0])
def test_equilibrium_identity(m, s):
    c = ClassParams(1.7, m, Exponential(1.0))
    assert equilibrium_factor(c, s) * s / 1.7 + m.lst(s) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("m", MODELS, ids=lambda m: type(m).__name__)
def test_equilibrium_factor_derivative(m):
    c = ClassParams(1.7, m, Exponential(1.0))
    for s in (0.2, 2.0):
        h = 1e-6 * s
        fd = (equilibrium_factor(c, s + h) - equilibrium_factor(c, s - h)) / (2 * h)
        assert equilibrium_factor_derivative(c, s) == pytest.approx(fd, rel=1e-6)


def test_equilibrium_factor_rejects_nonpositive():
    c = ClassParams(1.0, Exponential(1.0), Exponential(1.0))
    with pytest.raises(ValueError):
        equilibrium_factor(c, 0.0)


@pytest.mark.parametrize("bad", [
    lambda: Exponential(0.0), lambda: Exponential(-1.0), lambda: Deterministic(0.0),
    lambda: HyperExponential((0.5, 0.6), (1.0, 2.0)), lambda: HyperExponential((1.0,), (0.0,)),
    lambda: Erlang(0, 1.0), lambda: Erlang(2.5, 1.0),
    lambda: ClassParams(-1.0, Exponential(1.0), Exponential(1.0)),
    lambda: ClassParams(1.0, Exponential(1.0), Deterministic(1.0)),
    lambda: mmk(0, (1, 1), (1, 1), (1, 1)),
    lambda: MmkConfig(2, ClassParams(1, Deterministic(1), Exponential(1)),
                      ClassParams(1, Exponential(1), Exponential(1))),
    lambda: Mg1Config(ClassParams(1, Exponential(1), Exponential(1)),
                      ClassParams(1, Exponential(1), Exponential(1)), tolerance=0.0),
])
def test_invalid_parameters(bad):
    with pytest.raises((ValueError, TypeError)):
        bad()


def test_hyperexponential_weights_tolerance():
    HyperExponential((0.5, 0.5 + 5e-13), (1.0, 2.0))
    with pytest.raises(ValueError):
        HyperExponential((0.5, 0.5 + 1e-10), (1.0, 2.0))


def test_patience_branches():
    w, r = patience_branches(Exponential(2.0))
    assert list(w) == [1.0] and list(r) == [2.0]
    w, r = patience_branches(HyperExponential((0.25, 0.75), (1.0, 3.0)))
    assert list(w) == [0.25, 0.75] and list(r) == [1.0, 3.0]


@pytest.mark.parametrize("m", MODELS, ids=lambda m: type(m).__name__)
def test_sampler_mean(m):
    x = m.sample(np.random.default_rng(3), 200_000)
    assert x.mean() == pytest.approx(m.mean(), rel=0.02)


def test_class_dict_round_trip():
    for m in MODELS:
        c = ClassParams(0.5, m, HyperExponential((0.4, 0.6), (1.0, 2.0)))
        assert class_from_dict(class_to_dict(c)) == c
    d = {"arrival_rate": 1, "service": {"type": "exponential", "mean": 4.0},
         "patience": {"type": "exponential", "mean": 0.5}}
    c = class_from_dict(d)
    assert c.service.rate == 0.25 and c.patience.rate == 2.0
    d["service"] = {"type": "erlang", "phases": 2, "mean": 1.0}
    assert class_from_dict(d).service.rate == 2.0


def test_mmk_config_accessors():
    cfg = mmk(5, (10, 11), (1, 2), (1.5, 3))
    assert cfg.lam == (10, 11) and cfg.mu == (1, 2) and cfg.theta == (1.5, 3)
    sw = cfg.swapped()
    assert sw.lam == (11, 10) and sw.mu == (2, 1) and sw.theta == (3, 1.5)
    assert cfg.as_mg1().servers == 1
