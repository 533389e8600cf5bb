import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntkhess.errors import ConfigError
from ntkhess.losses import bgoss_bound, bgoss_bound_check, loss_grad, loss_hess, loss_value, make_loss


def specs(rng):
    N = 6
    return [
        make_loss("mse", rng.standard_normal(N)),
        make_loss("mse", rng.standard_normal((N, 2))),
        make_loss("binary_ce", rng.choice([-1, 1], N)),
        make_loss("softmax_ce", rng.integers(0, 3, N), 3),
    ]


def fd_grad(spec, Y, h=1e-6):
    g = np.empty_like(Y)
    for i in range(Y.size):
        e = np.zeros_like(Y)
        e[i] = h
        g[i] = (loss_value(spec, Y + e) - loss_value(spec, Y - e)) / (2 * h)
    return g


def test_grad_and_hess_vs_fd(rng):
    for spec in specs(rng):
        for _ in range(100 if spec.kind != "softmax_ce" else 30):
            Y = 2 * rng.standard_normal(spec.size)
            g = loss_grad(spec, Y)
            assert np.linalg.norm(g - fd_grad(spec, Y)) <= 1e-6 * max(np.linalg.norm(g), 1e-8)
        Y = rng.standard_normal(spec.size)
        H = loss_hess(spec, Y)
        Hfd = np.stack([(loss_grad(spec, Y + 1e-6 * e) - loss_grad(spec, Y - 1e-6 * e)) / 2e-6 for e in np.eye(spec.size)], 1)
        np.testing.assert_allclose(H, Hfd, atol=1e-8)
        np.testing.assert_array_equal(H, H.T)
        assert np.linalg.eigvalsh(H)[0] >= -1e-15


def test_mse_minimum(rng):
    spec = make_loss("mse", rng.standard_normal(5))
    assert loss_value(spec, spec.labels) == 0
    assert not loss_grad(spec, spec.labels).any()


def test_mse_hess_exact():
    spec = make_loss("mse", np.zeros(7))
    H = loss_hess(spec, np.arange(7.0))
    assert np.array_equal(H, np.eye(7) / 7)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.integers(0, 10**6))
def test_mse_gradient_norm_identity(N, seed):
    # with C = |Y - Y*|^2 / (2N) and the Euclidean gradient, |grad C|^2 = 2C / N
    rng = np.random.default_rng(seed)
    spec = make_loss("mse", rng.standard_normal(N))
    Y = rng.standard_normal(N)
    g = loss_grad(spec, Y)
    assert g @ g == pytest.approx(2 * loss_value(spec, Y) / N, rel=1e-12)


def test_binary_ce_hessian_at_zero():
    N = 5
    spec = make_loss("binary_ce", np.ones(N))
    H = loss_hess(spec, np.zeros(N))
    np.testing.assert_allclose(np.diag(H), 1 / (4 * N), rtol=1e-15)


def test_binary_ce_formula(rng):
    spec = make_loss("binary_ce", rng.choice([-1, 1], 4))
    Y = rng.standard_normal(4)
    np.testing.assert_allclose(np.diag(loss_hess(spec, Y)), 1 / (4 * (2 + np.exp(Y) + np.exp(-Y))), rtol=1e-13)


def test_binary_saturation():
    spec = make_loss("binary_ce", np.ones(3))
    assert np.linalg.norm(loss_grad(spec, np.full(3, 60.0))) < 1e-25


def test_bgoss_examples(rng):
    N = 16
    b = make_loss("binary_ce", rng.choice([-1, 1], N))
    r = bgoss_bound_check(b, [3 * rng.standard_normal(N) for _ in range(1000)])
    assert r["bound"] == 0.25 and r["violations"] == 0 and r["max_norm"] <= 0.25
    s = make_loss("softmax_ce", rng.integers(0, 10, N), 10)
    r = bgoss_bound_check(s, [3 * rng.standard_normal(N * 10) for _ in range(1000)])
    assert r["bound"] == pytest.approx(np.sqrt(20) / 4) and r["violations"] == 0
    with pytest.raises(ConfigError):
        bgoss_bound(make_loss("mse", np.zeros(3)))


def test_softmax_overflow_safe():
    spec = make_loss("softmax_ce", np.array([0, 1]), 2)
    Y = np.array([1000.0, -1000.0, 1000.0, -1000.0])
    assert np.isfinite(loss_value(spec, Y)) and np.all(np.isfinite(loss_grad(spec, Y)))


@pytest.mark.parametrize(
    "args",
    [("hinge", [1.0], None), ("binary_ce", [0, 1], None), ("softmax_ce", [0, 3], 3), ("softmax_ce", [0, 1], 1), ("binary_ce", [1, -1], 2)],
)
def test_bad_specs(args):
    with pytest.raises(ConfigError):
        make_loss(*args)


def test_shape_mismatch():
    spec = make_loss("mse", np.zeros(3))
    with pytest.raises(ConfigError):
        loss_value(spec, np.zeros(4))
