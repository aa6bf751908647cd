import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrolattice import (Exponential, Hyperbolic, Linear, Logarithmic, UtilityDomainError,
                          make_utility)


def test_spec_values():
    assert Linear().value(5.0) == 5.0
    assert Exponential(alpha=1.0).value(0.0) == 0.0
    assert Hyperbolic(gamma=0.95).value(1.0) == pytest.approx(1 / 0.95)
    assert Linear().d1(3.0) == 1.0 and Linear().d2(3.0) == 0.0
    assert Logarithmic().d1(2.0) == pytest.approx(0.5)
    assert Logarithmic().d2(2.0) == pytest.approx(-0.25)
    u = Exponential(alpha=0.5)
    assert u.inverse(u.value(3.0)) == pytest.approx(3.0)
    assert Exponential(alpha=0.3).d1(0.0) == pytest.approx(0.3)


UTILITIES = [Linear(), Exponential(alpha=0.7), Logarithmic(), Hyperbolic(gamma=0.95), Hyperbolic(gamma=0.3),
             Logarithmic(shift=2.0)]


@pytest.mark.parametrize("u", UTILITIES, ids=lambda u: f"{u.name}-{getattr(u, 'gamma', '')}{u.shift}")
def test_derivatives_match_finite_differences(u):
    rng = np.random.default_rng(1)
    v = rng.uniform(0.2, 20.0, 1000)
    h = 1e-5 * (1 + v)
    fd1 = (u.value(v + h) - u.value(v - h)) / (2 * h)
    fd2 = (u.d1(v + h) - u.d1(v - h)) / (2 * h)
    scale1 = np.maximum(np.abs(u.d1(v)), 1e-12)
    assert np.max(np.abs(fd1 - u.d1(v)) / scale1) <= 1e-6
    if u.name != "linear":
        assert np.max(np.abs(fd2 - u.d2(v)) / np.abs(u.d2(v))) <= 1e-6
    else:
        assert np.all(fd2 == 0)


@pytest.mark.parametrize("u", UTILITIES, ids=lambda u: u.name)
def test_inverse_round_trip(u):
    # 1 - exp(-alpha v) saturates in double precision, so keep alpha v moderate
    v = np.linspace(0.5, 10.0 if u.name == "exponential" else 50.0, 40)
    np.testing.assert_allclose(u.inverse(u.value(v)), v, rtol=1e-10)


def test_domains():
    with pytest.raises(UtilityDomainError):
        Logarithmic().check_domain(np.array([1.0, 0.0]), "hour 3")
    Logarithmic(shift=1.0).check_domain(0.0)
    Hyperbolic(gamma=0.5).check_domain(0.0)
    with pytest.raises(UtilityDomainError, match="hour 2"):
        Hyperbolic(gamma=0.5).check_domain(-1.0, "hour 2")
    with pytest.raises(UtilityDomainError):
        Exponential(alpha=1.0).inverse(1.0)
    with pytest.raises(UtilityDomainError):
        Hyperbolic(gamma=0.5).inverse(-0.1)


def test_parameter_validation():
    with pytest.raises(ValueError):
        Exponential(alpha=0.0)
    with pytest.raises(ValueError):
        Hyperbolic(gamma=1.0)
    with pytest.raises(ValueError):
        make_utility("quadratic")
    u = make_utility("Hyperbolic", gamma=0.95, shift=1.0)
    assert isinstance(u, Hyperbolic) and u.gamma == 0.95 and u.shift == 1.0


def test_certainty_equivalent_linear_is_mean():
    x = np.array([10.0, 20.0, 40.0])
    w = np.array([0.25, 0.5, 0.25])
    assert Linear().certainty_equivalent(x, w) == pytest.approx(22.5)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 500.0), min_size=1, max_size=12),
       st.sampled_from(["exponential", "logarithmic", "hyperbolic"]))
def test_jensen_certainty_equivalent_below_mean(values, name):
    params = {"exponential": {"alpha": 0.01}, "hyperbolic": {"gamma": 0.6}}.get(name, {})
    u = make_utility(name, **params)
    x = np.array(values)
    w = np.full(x.size, 1.0 / x.size)
    assert u.certainty_equivalent(x, w) <= w @ x + 1e-10 * (1 + np.abs(x).max())


def test_degenerate_distribution_ce_equals_value():
    for u in UTILITIES:
        assert u.certainty_equivalent([7.5, 7.5], [0.3, 0.7]) == pytest.approx(7.5)
