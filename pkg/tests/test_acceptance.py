"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (the lines are repeated in the
terminal summary) or directly with ``python3 tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest

from ntkhess import experiments as ex
from ntkhess.activations import make_nonlin
from ntkhess.data import generate
from ntkhess.gaussmoments import Cov2, bi_expect, bi_expect_table, hermite_rule
from ntkhess.kernels import compute_kernels
from ntkhess.losses import bgoss_bound_check, loss_grad, make_loss
from ntkhess.theory import expected_S_moments_mse, meanfield_predictions, predict_trI
from ntkhess.widenet import NetParams, assemble, hessian, init_params, jacobian, numerical_rank, outputs, rectangular

pytestmark = pytest.mark.acceptance

LINES = []


def _report(n, ok, detail, seconds):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}  [{seconds:.1f} s]"
    LINES.append(line)
    print(line, flush=True)
    return ok


def _disk(N):
    return generate({"source": "disk", "N": N, "seed": 0})


def _fd(fun, theta, h):
    cols = []
    for p in range(theta.size):
        e = np.zeros_like(theta)
        e[p] = h
        cols.append((fun(theta + e) - fun(theta - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


# criteria


def criterion_1():
    t0 = time.perf_counter()
    erf, sp = make_nonlin("erf"), make_nonlin("softplus")
    worst_erf = 0.0
    for rho in np.round(np.arange(-0.9, 0.91, 0.1), 10):
        exact = 2 / np.pi * np.arcsin(2 * rho / 3)
        val = bi_expect((erf, 0), (erf, 0), Cov2(1.0, rho, 1.0))
        worst_erf = max(worst_erf, abs(val - exact) / abs(exact) if exact != 0 else abs(val))
    lo_rule, hi_rule = hermite_rule(40), hermite_rule(80)
    pairs = [(i, j) for i in range(5) for j in range(5)]
    worst_sp = 0.0
    for v in (0.01, 0.1, 1.0, 3.0, 10.0):
        for w in (0.01, 1.0, v):
            k01 = np.linspace(-0.95, 0.95, 5) * np.sqrt(v * w)
            lo = bi_expect_table(sp, pairs, v, k01, w, lo_rule)
            hi = bi_expect_table(sp, pairs, v, k01, w, hi_rule)
            worst_sp = max(worst_sp, float(np.max(np.abs(lo - hi) / np.maximum(np.abs(hi), 1e-6))))
    dt = time.perf_counter() - t0
    ok = worst_erf <= 1e-8 and worst_sp <= 1e-9 and dt < 10
    return _report(1, ok, f"erf arcsine max rel {worst_erf:.2e}; softplus order-doubling max rel {worst_sp:.2e}", dt)


def criterion_2():
    t0 = time.perf_counter()
    X = _disk(8).inputs
    beta, L = 0.1, 4
    st = compute_kernels(X, L, beta, make_nonlin("identity"))
    s = X @ X.T / X.shape[1]
    err = 0.0
    for l in range(1, L + 1):
        err = max(err, _rel(st.sigma[l], s + l * beta**2))
        err = max(err, _rel(st.theta[l], l * s + beta**2 * l * (l + 1) / 2))
    ups = 2 * sum(l * s + beta**2 * l * (l + 1) / 2 for l in range(1, L))
    err = max(err, _rel(st.upsilon, ups))
    zero = max(np.abs(st.xi).max(), np.abs(st.phi).max(), np.abs(st.lam).max())
    dt = time.perf_counter() - t0
    ok = err <= 1e-10 and zero <= 1e-10 and dt < 1
    return _report(2, ok, f"linear closed forms max rel {err:.2e}; Xi, Phi, Lambda max {zero:.1e}", dt)


def criterion_3():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_hy = worst_h = 0.0
    ranks_ok = True
    nls = ["softplus", "erf", "tanh", "arctan", "normalized_softplus"]
    for i in range(20):
        while True:
            L = int(rng.integers(2, 5))
            width = int(rng.integers(2, 7))
            n0, nout, N = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 4))
            arch = rectangular(n0, width, L, n_out=nout, nl=nls[i % len(nls)])
            if arch.P <= 200:
                break
        p = init_params(arch, int(rng.integers(1 << 30)))
        X = rng.standard_normal((N, n0))
        HY = hessian(p, X)
        fd = _fd(lambda th: jacobian(NetParams(th, arch), X), p.theta, 1e-5).transpose(1, 2, 0)
        worst_hy = max(worst_hy, _rel(HY, fd))
        loss = make_loss("mse", rng.standard_normal((N, nout)), nout)
        b = assemble(p, X, loss)

        def grad(th):
            q = NetParams(th, arch)
            return jacobian(q, X).T @ loss_grad(loss, outputs(q, X))

        fdh = _fd(grad, p.theta, 1e-5)
        worst_h = max(worst_h, _rel(b.H, 0.5 * (fdh + fdh.T)))
        rI, rS = b.rank_bounds
        ranks_ok &= numerical_rank(b.I) <= rI and numerical_rank(b.S) <= rS
    dt = time.perf_counter() - t0
    ok = worst_hy <= 1e-5 and worst_h <= 1e-5 and ranks_ok and dt < 120
    return _report(3, ok, f"HY vs FD max rel {worst_hy:.2e}; H vs FD max rel {worst_h:.2e}; rank bounds {'hold' if ranks_ok else 'VIOLATED'}", dt)


def criterion_4():
    t0 = time.perf_counter()
    setup = ex.make_setup(_disk(8), 3, 100)
    means = []
    for w in (100, 400, 1600):
        errs = ex.run_trials(ex.ntk_error_trial, setup.with_width(w), range(20))
        means.append(float(np.mean(errs)))
    dt = time.perf_counter() - t0
    ok = means[0] > means[1] > means[2] and means[2] < 0.15 and dt < 300
    return _report(4, ok, "mean rel NTK error at widths 100/400/1600: " + " / ".join(f"{m:.4f}" for m in means), dt)


FLOW_TIMES = (0.0, 0.5, 1.0, 1.5, 2.0)


def flow_ensemble(trials=100):
    """Shared ensemble for criteria 5 and 6 (L = 3, width 800, N = 32 disk, MSE)."""
    t0 = time.perf_counter()
    setup = ex.make_setup(_disk(32), 3, 800)
    res = ex.run_trials(ex.moment_trial, setup, range(trials), times=FLOW_TIMES, k_max=4, probes=16, later_k_max=2, later_mixed=False)
    return setup, res, time.perf_counter() - t0


def criterion_5(ens):
    setup, res, seconds = ens
    t0 = time.perf_counter()
    g, loss = setup.grams, setup.loss()
    ys = loss.labels.reshape(-1)
    trI = predict_trI(loss, g.theta, ys, 4)
    e1, e2 = expected_S_moments_mse(g.theta, g.lam, g.upsilon, g.sigma, g.phi, ys, 0.0, setup.N)
    trH = np.stack([r["trH"][0] for r in res])
    mean, se = ex.ensemble_stats(trH)
    theory = np.array([trI[0] + e1, trI[1] + e2])
    z = np.abs(mean[:2] - theory) / se[:2]
    dev = np.abs(mean[2:] - trI[2:])
    lim = 3 * se[2:] + 0.1 * np.abs(trI[2:])
    dt = seconds + time.perf_counter() - t0
    ok = bool(np.all(z <= 3) and np.all(dev <= lim) and dt < 1800)
    detail = f"|z| Tr H, Tr H^2 = {z[0]:.2f}, {z[1]:.2f}; |Tr H^k - Tr I^k| / allowance k=3,4: {dev[0] / lim[0]:.2f}, {dev[1] / lim[1]:.2f}"
    return _report(5, ok, detail, dt)


def criterion_6(ens):
    setup, res, seconds = ens
    t0 = time.perf_counter()
    emp = np.stack([r["trS"][:, :2] for r in res]).mean(axis=0)
    pred = np.stack([r["pred_trS"] for r in res]).mean(axis=0)
    rel = np.abs(emp - pred) / np.abs(pred)
    t_act = res[0]["t"]
    dt = seconds + time.perf_counter() - t0
    ok = bool(t_act.size == 5 and np.all(rel <= 0.2) and dt < 1800)
    return _report(6, ok, f"max rel error over 5 checkpoints: Tr S {rel[:, 0].max():.3f}, Tr S^2 {rel[:, 1].max():.3f}", dt)


def criterion_7():
    t0 = time.perf_counter()
    setup = ex.make_setup(_disk(8), 3, 100)
    widths = (100, 400, 1600)
    stats = {}
    for w in widths:
        res = ex.run_trials(ex.sweep_trial, setup.with_width(w), range(20), probes=16)
        stats[w] = {k: float(np.mean([r[k] for r in res])) for k in ("frob_IS_normalized", "op_S", "frob_S")}
    o = [stats[w]["frob_IS_normalized"] for w in widths]
    op = [stats[w]["op_S"] for w in widths]
    fs = [stats[w]["frob_S"] / stats[400]["frob_S"] for w in widths]
    dt = time.perf_counter() - t0
    ok = o[0] > o[1] > o[2] and op[0] > op[1] > op[2] and all(0.5 <= f <= 1.5 for f in fs) and dt < 900
    detail = "normalized |IS|_F " + "/".join(f"{v:.4f}" for v in o) + "; |S|_op " + "/".join(f"{v:.4f}" for v in op) + "; |S|_F / width-400 " + "/".join(f"{v:.2f}" for v in fs)
    return _report(7, ok, detail, dt)


def criterion_8():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    N, c = 8, 3
    b = make_loss("binary_ce", np.where(rng.random(N) < 0.5, 1, -1))
    s = make_loss("softmax_ce", rng.integers(0, c, N), c)
    scales = np.exp(rng.uniform(np.log(0.01), np.log(100), 10_000))
    rb = bgoss_bound_check(b, scales[:, None] * rng.standard_normal((10_000, N)))
    rs = bgoss_bound_check(s, scales[:, None] * rng.standard_normal((10_000, N * c)))
    dt = time.perf_counter() - t0
    ok = rb["n"] == rs["n"] == 10_000 and rb["violations"] == 0 and rs["violations"] == 0 and dt < 5
    detail = f"binary max/bound {rb['max_norm'] / rb['bound']:.3f}, softmax max/bound {rs['max_norm'] / rs['bound']:.3f}, violations {rb['violations'] + rs['violations']}"
    return _report(8, ok, detail, dt)


def criterion_9():
    t0 = time.perf_counter()
    setup = ex.make_setup(_disk(8), 3, 100)
    omega, gamma = ((0, 1, 2), (3, 3, 5)), ((0, 1, 2, 3), (4, 6, 6, 7))
    rms = {}
    for w in (100, 800):
        res = ex.run_trials(ex.tensor_trial, setup.with_width(w), range(100), omega=omega, gamma=gamma)
        rms[w] = (np.sqrt(np.mean([r["omega"] ** 2 for r in res])), np.sqrt(np.mean([r["gamma"] ** 2 for r in res])))
    dt = time.perf_counter() - t0
    ok = rms[800][0] < rms[100][0] and rms[800][1] < rms[100][1] and dt < 600
    return _report(9, ok, f"RMS Omega {rms[100][0]:.2e} -> {rms[800][0]:.2e}; RMS Gamma {rms[100][1]:.2e} -> {rms[800][1]:.2e}", dt)


def criterion_10():
    t0 = time.perf_counter()
    X = _disk(8).inputs
    cond = {nl: np.linalg.cond(compute_kernels(X, 4, 0.1, make_nonlin(nl)).ntk) for nl in ("softplus", "normalized_softplus")}
    ratio = cond["softplus"] / cond["normalized_softplus"]
    dt = time.perf_counter() - t0
    ok = ratio > 2 and dt < 60
    return _report(10, ok, f"cond softplus {cond['softplus']:.3e}, normalized {cond['normalized_softplus']:.3e}, ratio {ratio:.1f}", dt)


def criterion_11():
    t0 = time.perf_counter()
    setup = ex.make_setup(_disk(4), 2, 800)
    res = ex.run_trials(ex.meanfield_trial, setup, range(500))
    a = np.array([r["trH_over_sqrt_w"] for r in res])
    b = np.array([r["trH2_over_w"] for r in res])
    # gradient of C = |Y - Y*|^2 / (2N) at Y = 0 in Euclidean coordinates
    grad = -setup.labels.reshape(-1) / setup.N
    pv, pm = meanfield_predictions(setup.grams.xi, setup.grams.upsilon, grad)
    rv, rm = abs(a.var(ddof=1) / pv - 1), abs(b.mean() / pm - 1)
    dt = time.perf_counter() - t0
    ok = rv <= 0.25 and rm <= 0.25 and dt < 1200
    return _report(11, ok, f"Var Tr(wH)/sqrt(w) off by {100 * rv:.1f}%, mean Tr((wH)^2)/w off by {100 * rm:.1f}%", dt)


# pytest entry points


@pytest.fixture(scope="module")
def ensemble():
    return flow_ensemble()


def test_criterion_01_quadrature():
    assert criterion_1()


def test_criterion_02_linear_kernels():
    assert criterion_2()


def test_criterion_03_hessian_machinery():
    assert criterion_3()


def test_criterion_04_ntk_convergence():
    assert criterion_4()


def test_criterion_05_moments_at_init(ensemble):
    assert criterion_5(ensemble)


def test_criterion_06_training_tracking(ensemble):
    assert criterion_6(ensemble)


def test_criterion_07_orthogonality_trend():
    assert criterion_7()


def test_criterion_08_cross_entropy_bounds():
    assert criterion_8()


def test_criterion_09_tensor_decay():
    assert criterion_9()


def test_criterion_10_freeze_chaos():
    assert criterion_10()


def test_criterion_11_meanfield():
    assert criterion_11()


if __name__ == "__main__":
    results = [criterion_1(), criterion_2(), criterion_3(), criterion_4()]
    ens = flow_ensemble()
    results += [criterion_5(ens), criterion_6(ens), criterion_7(), criterion_8(), criterion_9(), criterion_10(), criterion_11()]
    print(f"{sum(results)}/{len(results)} criteria passed")
    raise SystemExit(0 if all(results) else 1)
