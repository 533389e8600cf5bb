import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fd_jacobian
from ntkhess.errors import ConfigError
from ntkhess.losses import loss_grad, loss_value, make_loss
from ntkhess.widenet import NetParams, assemble, g_trace, hessian, hessian_vector, init_params, jacobian, numerical_rank, outputs, rectangular, s_matrix


def _net(L=3, width=3, nout=1, seed=0, nl="softplus", N=3):
    a = rectangular(2, width, L, n_out=nout, nl=nl)
    X = np.random.default_rng(seed + 99).standard_normal((N, 2))
    return init_params(a, seed), X


@settings(max_examples=10, deadline=None)
@given(L=st.integers(2, 3), width=st.integers(1, 4), nout=st.integers(1, 2), seed=st.integers(0, 10_000))
def test_hessian_matches_fd(L, width, nout, seed):
    p, X = _net(L, width, nout, seed)
    HY = hessian(p, X)
    fd = fd_jacobian(lambda th: jacobian(NetParams(th, p.arch), X), p.theta)  # (R, P, P)
    np.testing.assert_allclose(HY, fd.transpose(1, 2, 0), atol=1e-6 * max(1, np.abs(HY).max()))


def test_single_layer_is_linear():
    p, X = _net(L=1)
    assert not hessian(p, X).any()
    assert not g_trace(p, X).any()


def test_last_bias_slices_zero():
    p, X = _net(L=3, width=4, nout=2)
    HY = hessian(p, X)
    bs, end = p.arch.offsets()[-1][1:]
    assert not HY[bs:end].any() and not HY[:, bs:end].any()


def test_hessian_vector_and_cap(rng):
    p, X = _net(L=3, width=4)
    v = rng.standard_normal(p.arch.P)
    np.testing.assert_allclose(hessian_vector(p, X, v), np.einsum("pqr,q->rp", hessian(p, X), v), atol=1e-12)
    with pytest.raises(ConfigError):
        hessian(p, X, cap=5)


def test_g_trace_is_tensor_trace():
    for L in (2, 3, 4):
        p, X = _net(L=L, width=4, nout=2)
        tr = np.einsum("ppr->r", hessian(p, X))
        np.testing.assert_allclose(g_trace(p, X).reshape(-1), tr, rtol=1e-10, atol=1e-12)


def test_s_matrix_matches_tensor(rng):
    p, X = _net(L=3, width=4, nout=2)
    c = rng.standard_normal(6)
    np.testing.assert_allclose(s_matrix(p, X, c), hessian(p, X) @ c, atol=1e-12)


def test_assemble_zero_residual():
    p, X = _net()
    b = assemble(p, X, make_loss("mse", outputs(p, X)))
    assert np.abs(b.S).max() < 1e-15
    np.testing.assert_array_equal(b.H, b.I)


@pytest.mark.parametrize("kind", ["mse", "binary_ce"])
def test_assemble_matches_fd_loss_hessian(kind):
    p, X = _net(L=3, width=3, N=4)
    labels = np.array([0.5, -1.0, 0.2, 1.0]) if kind == "mse" else np.array([1, -1, -1, 1])
    loss = make_loss(kind, labels)
    b = assemble(p, X, loss)

    def grad(th):
        q = NetParams(th, p.arch)
        return jacobian(q, X).T @ loss_grad(loss, outputs(q, X))

    fd = fd_jacobian(grad, p.theta, h=1e-5)
    np.testing.assert_allclose(b.H, 0.5 * (fd + fd.T), atol=1e-7 * np.abs(b.H).max())
    assert loss_value(loss, b.Y) >= 0


def test_assemble_rank_bounds(rng):
    p, X = _net(L=3, width=5, N=2)
    b = assemble(p, X, make_loss("mse", rng.standard_normal(2)))
    rI, rS = b.rank_bounds
    assert rI == 2 and rS == 2 * 10 * 2
    assert numerical_rank(b.I) <= rI
    assert numerical_rank(b.S) <= rS


def test_assemble_directional_fallback(rng):
    p, X = _net(L=3, width=12)
    assert p.arch.P > 200
    b = assemble(p, X, make_loss("mse", rng.standard_normal(3)))
    assert b.HY is None
    with pytest.raises(ConfigError):
        assemble(p, X, make_loss("mse", np.zeros(3)), matrix_cap=10)


def test_numerical_rank_edges():
    assert numerical_rank(np.zeros((3, 3))) == 0
    assert numerical_rank(np.diag([1.0, 1e-12, 0.5])) == 2
