import numpy as np
import pytest

from ntkhess.errors import ConfigError
from ntkhess.losses import make_loss
from ntkhess.widenet import (
    MomentEngine,
    assemble,
    empirical_moments,
    empirical_upsilon,
    hessian,
    init_params,
    jacobian,
    loss_surface_slice,
    outputs,
    rayleigh_profile,
    rectangular,
    s_operator,
    tensor_decay_probe,
)


@pytest.fixture(scope="module")
def small():
    a = rectangular(2, 6, 3, n_out=1)
    X = np.random.default_rng(3).standard_normal((4, 2))
    p = init_params(a, 5)
    loss = make_loss("mse", np.array([1.0, -0.5, 0.3, 2.0]))
    return p, X, loss, assemble(p, X, loss)


def test_empirical_moments_dense(small):
    _, _, _, b = small
    m = empirical_moments(b)
    for k in range(1, 5):
        assert m["trH"][k - 1] == pytest.approx(np.trace(np.linalg.matrix_power(b.H, k)), rel=1e-10)
    assert 0 <= m["frob_IS_normalized"] <= 1
    assert m["op_S"] == pytest.approx(np.abs(np.linalg.eigvalsh(b.S)).max())


def test_engine_exact_parts_match_dense(small):
    p, X, loss, b = small
    ref = empirical_moments(b)
    m = MomentEngine(p, X, loss, probes=8, seed=0).moments(4, op_norm=True)
    np.testing.assert_allclose(m["trI"], ref["trI"], rtol=1e-10)
    assert m["trS"][0] == pytest.approx(ref["trS"][0], rel=1e-10)
    mixed = ref["trH"] - ref["trI"] - ref["trS"]
    np.testing.assert_allclose(m["mixed"][1:], mixed[1:], rtol=1e-8, atol=1e-10 * np.abs(ref["trH"]).max())
    assert m["frob_IS"] == pytest.approx(ref["frob_IS"], rel=1e-8)
    assert m["op_S"] == pytest.approx(ref["op_S"], rel=1e-5)


def test_engine_hutchinson_within_error(small):
    p, X, loss, b = small
    ref = empirical_moments(b)
    m = MomentEngine(p, X, loss, probes=400, seed=1).moments(4)
    for k in (2, 3, 4):
        assert abs(m["trS"][k - 1] - ref["trS"][k - 1]) <= 5 * m["trS_se"][k - 1] + 1e-12


def test_engine_light_mode(small):
    p, X, loss, _ = small
    m = MomentEngine(p, X, loss, probes=4).moments(2, mixed=False)
    assert np.isnan(m["trH"]).all() and np.isnan(m["frob_IS"])
    assert m["trI"].shape == (2,)
    with pytest.raises(ConfigError):
        MomentEngine(p, X, loss).moments(5)


def test_s_operator(small, rng):
    p, X, loss, b = small
    op = s_operator(p, X, b.grad)
    v = rng.standard_normal(p.arch.P)
    np.testing.assert_allclose(op @ v, b.S @ v, atol=1e-12)


def test_tensor_probe_matches_dense(small):
    p, X, _, _ = small
    J, HY = jacobian(p, X), hessian(p, X)
    out = tensor_decay_probe(p, X, omega=[(0, 1, 2), (3, 3, 3)], gamma=[(0, 1, 2, 3)])
    assert out["omega"][0] == pytest.approx(J[0] @ HY[:, :, 1] @ J[2], rel=1e-10)
    assert out["omega"][1] == pytest.approx(J[3] @ HY[:, :, 3] @ J[3], rel=1e-10)
    assert out["gamma"][0] == pytest.approx(J[0] @ HY[:, :, 1] @ HY[:, :, 2] @ J[3], rel=1e-10)
    with pytest.raises(ConfigError):
        tensor_decay_probe(p, X, omega=[(0, 1, 4)])


def test_rayleigh_profile(small):
    _, _, _, b = small
    r = rayleigh_profile(b, 3)
    assert r["I"].shape == (3, 3)
    np.testing.assert_allclose(r["I"][:, 0], r["I"][:, 1], rtol=1e-10)
    np.testing.assert_allclose(r["S"][:, 0], r["S"][:, 2], rtol=1e-10)
    assert np.all(np.diff(r["S"][:, 0]) <= 0)
    with pytest.raises(ConfigError):
        rayleigh_profile(b, 0)


def test_loss_surface_taylor(small):
    p, X, loss, b = small
    w, V = np.linalg.eigh(b.H)
    v1, v2 = V[:, -1], V[:, -2]
    ext = 1e-2
    a, c, vals = loss_surface_slice(p, X, loss, v1, v2, grid=5, extent=ext)
    c0 = vals[2, 2]
    for i in (0, 4):
        for j in (0, 4):
            d = a[i] * v1 + c[j] * v2
            quad = c0 + b.grad @ jacobian(p, X) @ d + 0.5 * d @ b.H @ d
            assert abs(vals[i, j] - quad) <= 0.1 * abs(vals[i, j] - c0)


def test_loss_surface_zero_extent_and_checks(small):
    p, X, loss, _ = small
    e = np.eye(p.arch.P)
    _, _, vals = loss_surface_slice(p, X, loss, e[0], e[1], grid=3, extent=0.0)
    assert np.all(vals == vals[0, 0])
    with pytest.raises(ConfigError):
        loss_surface_slice(p, X, loss, e[0], e[0])


def test_empirical_upsilon_hutchinson(small):
    p, X, _, _ = small
    HY = hessian(p, X)
    ref = np.einsum("pqi,pqj->ij", HY, HY)
    est = empirical_upsilon(p, X, probes=2000, seed=0)
    assert np.linalg.norm(est - ref) / np.linalg.norm(ref) < 0.1
    assert outputs(p, X).shape == (4,)
