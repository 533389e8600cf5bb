import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntkhess.activations import NONLINEARITIES, make_nonlin
from ntkhess.errors import ConfigError

GRID = np.linspace(-5, 5, 201)


@pytest.mark.parametrize("name", NONLINEARITIES)
@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_derivative_consistency(name, k):
    nl = make_nonlin(name)
    h = 1e-4
    fd = (nl.eval_k(k - 1, GRID + h) - nl.eval_k(k - 1, GRID - h)) / (2 * h)
    d = nl.eval_k(k, GRID)
    assert np.max(np.abs(d - fd) / (1 + np.abs(d))) < 1e-6


@pytest.mark.parametrize("name", NONLINEARITIES)
def test_derivatives_bounded(name):
    nl = make_nonlin(name)
    for k in range(1, 5):
        assert np.all(np.isfinite(nl.eval_k(k, GRID)))
        assert np.max(np.abs(nl.eval_k(k, GRID))) < 1e6


def test_identity_derivative():
    assert make_nonlin("identity").eval_k(1, 3.7) == 1.0


def test_softplus_at_zero():
    assert make_nonlin("softplus").eval_k(0, 0.0) == pytest.approx(np.log(2.0), abs=1e-15)


def test_normalized_softplus_second_moment():
    # independent oracle: adaptive integration against the N(0, 1) density
    from scipy.integrate import quad

    nl = make_nonlin("normalized_softplus")
    dens = lambda x: np.exp(-x * x / 2) / np.sqrt(2 * np.pi)  # noqa: E731
    m2 = quad(lambda x: nl(x) ** 2 * dens(x), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13)[0]
    m1 = quad(lambda x: nl(x) * dens(x), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13)[0]
    assert abs(m2 - 1.0) < 1e-8
    # standardized form: the mean is removed as well
    assert abs(m1) < 1e-8


def test_erf_identity():
    nl = make_nonlin("erf")
    x = np.linspace(-4, 4, 101)
    assert np.max(np.abs(nl.eval_k(2, x) + 2 * x * nl.eval_k(1, x))) < 1e-12


def test_unknown_name():
    with pytest.raises(ConfigError):
        make_nonlin("relu")


def test_bad_order():
    with pytest.raises(ValueError):
        make_nonlin("tanh").eval_k(5, 0.0)


def test_scalar_in_scalar_out():
    assert isinstance(make_nonlin("tanh").eval_k(2, 0.3), float)


def test_packs_compare_by_name():
    assert make_nonlin("softplus") == make_nonlin("softplus")
    assert make_nonlin("softplus") != make_nonlin("normalized_softplus")


@settings(max_examples=50, deadline=None)
@given(st.floats(-30, 30))
def test_softplus_derivative_is_sigmoid(x):
    nl = make_nonlin("softplus")
    assert nl.eval_k(1, x) == pytest.approx(1 / (1 + np.exp(-x)), rel=1e-12)
    assert 0 <= nl.eval_k(2, x) <= 0.25
