import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from railrisk.pmf import DiscretePmf, GridOverflowError, binomial_mixture, compound, convolve


def test_trailing_zeros_trimmed():
    a = DiscretePmf([0.5, 0.5, 0.0, 0.0])
    assert a.masses.size == 2
    assert a.allclose(DiscretePmf([0.5, 0.5]))


def test_rejects_negative_and_excess_mass():
    with pytest.raises(ValueError):
        DiscretePmf([-0.1, 1.1])
    with pytest.raises(ValueError):
        DiscretePmf([0.6, 0.6])


def test_sub_distribution_declares_its_total():
    d = DiscretePmf([0.0, 0.3], declared_total=0.3)
    assert d.is_normalized()
    assert not DiscretePmf([0.0, 0.3]).is_normalized()
    with pytest.raises(ValueError):
        DiscretePmf([0.0, 0.3]).check_normalized()


def test_point_and_grid():
    d = DiscretePmf.point(3000, step=1000)
    assert d.prob(3000) == 1.0
    assert d.prob(2500) == 0.0
    assert list(d.support) == [0, 1000, 2000, 3000]
    with pytest.raises(ValueError):
        DiscretePmf.point(1500, step=1000)


def test_from_dict_rejects_off_grid():
    with pytest.raises(ValueError):
        DiscretePmf.from_dict({1500: 1.0}, step=1000)


def test_sf_is_strict():
    d = DiscretePmf.from_dict({0: 0.2, 2: 0.5, 5: 0.3})
    assert d.sf(2) == pytest.approx(0.3)
    assert d.sf(1.999) == pytest.approx(0.8)
    assert d.sf(-1) == pytest.approx(1.0)


def test_mean_and_expect():
    d = DiscretePmf.from_dict({1: 0.5, 3: 0.5})
    assert d.mean() == pytest.approx(2.0)
    assert d.expect(lambda x: x ** 2) == pytest.approx(5.0)


def test_convolve_point_masses():
    c = convolve(DiscretePmf.point(2), DiscretePmf.point(3))
    assert c.allclose(DiscretePmf.point(5))
    with pytest.raises(ValueError):
        convolve(DiscretePmf.point(0), DiscretePmf.point(0, step=10))


def test_binomial_three_cars():
    m = binomial_mixture(np.array([0, 0, 0, 1.0]), 0.043)
    assert m[0] == pytest.approx(0.957 ** 3, abs=1e-15)
    assert m.sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("p", [-0.01, 1.01])
def test_binomial_rejects_bad_probability(p):
    with pytest.raises(ValueError):
        binomial_mixture(np.array([1.0]), p)


def test_binomial_edges():
    m = np.array([0.2, 0.3, 0.5])
    assert np.allclose(binomial_mixture(m, 0.0), [1.0, 0, 0])
    assert np.allclose(binomial_mixture(m, 1.0), m)


def test_compound_two_amounts():
    per = DiscretePmf.from_dict({10000: 0.5, 20000: 0.5}, step=1000)
    out = compound(DiscretePmf.point(2), per)
    assert out.to_dict() == pytest.approx({20000: 0.25, 30000: 0.5, 40000: 0.25})


def test_compound_overflow():
    per = DiscretePmf.point(30000, step=1000)
    with pytest.raises(GridOverflowError):
        compound(DiscretePmf.point(5), per, max_value=100000)


def test_compound_zero_releases():
    per = DiscretePmf.point(30000, step=1000)
    assert compound(DiscretePmf.point(0), per).allclose(DiscretePmf.point(0, step=1000))


probs = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8).filter(lambda v: sum(v) > 0)


@settings(max_examples=100, deadline=None)
@given(probs, st.floats(0.0, 1.0))
def test_binomial_mixture_preserves_mass_and_mean(w, p):
    w = np.array(w) / sum(w)
    out = binomial_mixture(w, p)
    assert out.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.dot(np.arange(out.size), out) == pytest.approx(
        p * np.dot(np.arange(w.size), w), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(probs, probs)
def test_convolution_means_add(a, b):
    a = DiscretePmf(np.array(a) / sum(a))
    b = DiscretePmf(np.array(b) / sum(b))
    c = convolve(a, b)
    assert math.isclose(c.mean(), a.mean() + b.mean(), abs_tol=1e-12)
    assert c.is_normalized()
