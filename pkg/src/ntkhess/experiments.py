"""Ensemble experiments comparing finite networks with the limiting predictions.

A :class:`Setup` holds only plain data so trials can be shipped to worker
processes. Trial ``i`` of an ensemble always uses seed ``base_seed + i`` and
results are collected in seed order, so aggregates do not depend on the
number of workers.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .activations import make_nonlin
from .errors import ConfigError
from .gaussmoments import hermite_rule
from .kernels import compute_kernels
from .losses import loss_grad, make_loss
from .theory import FlowState, Grams, grams_from_stack, ode_flow, predict_S_moments_mse
from .widenet.hessian import g_trace
from .widenet.net import Arch, init_params, jacobian, meanfield_rescale
from .widenet.probes import MomentEngine, tensor_decay_probe
from .widenet.train import train_flow

__all__ = [
    "Setup",
    "make_setup",
    "run_trials",
    "ensemble_stats",
    "moment_trial",
    "sweep_trial",
    "ntk_error_trial",
    "tensor_trial",
    "meanfield_trial",
]


@dataclass
class Setup:
    """Dataset, architecture and loss of one experiment, plus the limiting Grams."""

    X: np.ndarray
    labels: np.ndarray
    widths: tuple
    beta: float = 0.1
    nl: str = "softplus"
    loss_kind: str = "mse"
    grams: Grams | None = None

    @property
    def n_L(self) -> int:
        return self.widths[-1]

    @property
    def N(self) -> int:
        return self.X.shape[0]

    def arch(self, width=None) -> Arch:
        w = self.widths if width is None else (self.widths[0],) + (int(width),) * (len(self.widths) - 2) + (self.widths[-1],)
        return Arch(w, beta=self.beta, nl=make_nonlin(self.nl))

    def loss(self):
        return make_loss(self.loss_kind, self.labels, self.n_L)

    def with_width(self, width) -> "Setup":
        return Setup(self.X, self.labels, self.arch(width).widths, self.beta, self.nl, self.loss_kind, self.grams)


def make_setup(dataset, L: int, width: int, nl: str = "softplus", beta: float = 0.1, loss_kind: str = "mse", quad_order: int = 40, lambda_last_term: str = "sigma") -> Setup:
    """Rectangular ``L``-layer setup on a :class:`~ntkhess.data.Dataset` with its limiting Grams."""
    if int(L) < 1:
        raise ConfigError("L must be >= 1")
    n_L = int(dataset.n_L)
    widths = (dataset.n0,) + (int(width),) * (int(L) - 1) + (n_L,)
    stack = compute_kernels(dataset.inputs, int(L), beta, make_nonlin(nl), hermite_rule(quad_order), lambda_last_term=lambda_last_term)
    return Setup(dataset.inputs, dataset.labels, widths, float(beta), nl, loss_kind, grams_from_stack(stack, n_L))


def _call(args):
    fn, setup, seed, kw = args
    return fn(setup, seed, **kw)


def run_trials(fn, setup: Setup, seeds, jobs: int = 1, **kw) -> list:
    """``[fn(setup, s, **kw) for s in seeds]``, optionally over ``jobs`` processes (order preserved)."""
    seeds = [int(s) for s in seeds]
    if int(jobs) <= 1 or len(seeds) <= 1:
        return [fn(setup, s, **kw) for s in seeds]
    with ProcessPoolExecutor(max_workers=int(jobs)) as ex:
        return list(ex.map(_call, [(fn, setup, s, kw) for s in seeds]))


def ensemble_stats(values, axis: int = 0):
    """Mean and standard error along ``axis`` (standard error is NaN for one sample)."""
    v = np.asarray(values, dtype=float)
    n = v.shape[axis]
    mean = v.mean(axis=axis)
    se = v.std(axis=axis, ddof=1) / np.sqrt(n) if n > 1 else np.full_like(mean, np.nan)
    return mean, se


def moment_trial(setup: Setup, seed: int, times=(0.0,), k_max: int = 4, probes: int = 16, later_k_max: int | None = None, later_mixed: bool = True) -> dict:
    """Empirical moments of ``H`` along gradient flow, with pathwise predictions.

    The predictions for ``Tr(S)`` and ``Tr(S^2)`` start from the trial's own
    ``Y(0)`` and ``G(0)``. ``later_k_max`` and ``later_mixed`` lighten the
    work after ``t = 0`` (see :meth:`MomentEngine.moments`); skipped entries
    are NaN.

    Returns
    -------
    dict
        ``t`` (actual recording times), ``trI``, ``trS``, ``trH``, ``trS_se``
        (each ``(len(t), k_max)``), ``pred_trS`` (``(len(t), 2)``), ``loss``
        and the initial ``Y0``, ``G0``.
    """
    arch, loss = setup.arch(), setup.loss()
    p0 = init_params(arch, seed)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    t_max = float(times.max())
    if t_max > 0:
        traj = train_flow(p0, setup.X, loss, t_max, record_times=times)
        states = list(zip(traj.times, traj.params))
    else:
        states = [(0.0, p0)]
    eng0 = MomentEngine(p0, setup.X, loss, probes=probes, seed=seed)
    Y0 = eng0.Y
    G0 = g_trace(p0, setup.X).reshape(-1)
    out = {k: [] for k in ("t", "trI", "trS", "trH", "trS_se", "pred_trS", "loss")}
    for t, p in states:
        if t == 0.0:
            m = eng0.moments(k_max)
        else:
            kl = k_max if later_k_max is None else min(int(later_k_max), k_max)
            m = MomentEngine(p, setup.X, loss, probes=probes, seed=seed).moments(kl, mixed=later_mixed)
        out["t"].append(t)
        for key in ("trI", "trS", "trH", "trS_se"):
            out[key].append(np.pad(m[key], (0, k_max - m[key].size), constant_values=np.nan))
        out["loss"].append(m["loss"])
        out["pred_trS"].append(_pathwise(setup, loss, Y0, G0, t))
    out = {k: np.asarray(v) for k, v in out.items()}
    out["Y0"], out["G0"] = Y0, G0
    return out


def _pathwise(setup, loss, Y0, G0, t):
    g = setup.grams
    if g is None:
        return np.full(2, np.nan)
    if loss.kind == "mse":
        return np.array(predict_S_moments_mse(g.theta, g.lam, g.upsilon, Y0, G0, loss.labels.reshape(-1), t, setup.N))
    st = FlowState(0.0, Y0, G0)
    if t > 0:
        st = ode_flow(loss, g.theta, g.lam, st, t, max(1, int(np.ceil(1000 * t))))[-1]
    gr = loss_grad(loss, st.Y)
    return np.array([st.G @ gr, gr @ g.upsilon @ gr])


def sweep_trial(setup: Setup, seed: int, probes: int = 16, op_norm: bool = True) -> dict:
    """Orthogonality and decay statistics of one network at initialization."""
    p = init_params(setup.arch(), seed)
    m = MomentEngine(p, setup.X, setup.loss(), probes=probes, seed=seed).moments(4, op_norm=op_norm)
    eps = 1e-300
    add = np.abs(m["mixed"][1:]) / (np.abs(m["trI"][1:]) + np.abs(m["trS"][1:]) + eps)
    return {
        "frob_IS_normalized": m["frob_IS_normalized"],
        "frob_IS": m["frob_IS"],
        "frob_I": m["frob_I"],
        "frob_S": m["frob_S"],
        "op_S": m.get("op_S", np.nan),
        "trS3": m["trS"][2],
        "trS4": m["trS"][3],
        "additivity2": add[0],
        "additivity3": add[1],
        "additivity4": add[2],
    }


def ntk_error_trial(setup: Setup, seed: int) -> float:
    """Relative Frobenius distance between the empirical NTK Gram and its limit."""
    p = init_params(setup.arch(), seed)
    J = jacobian(p, setup.X)
    T = setup.grams.theta
    return float(np.linalg.norm(J @ J.T - T) / np.linalg.norm(T))


def tensor_trial(setup: Setup, seed: int, omega=((0, 1, 2),), gamma=((0, 1, 2, 3),)) -> dict:
    """Values of the ``Omega`` and ``Gamma`` contractions for one seed."""
    return tensor_decay_probe(init_params(setup.arch(), seed), setup.X, omega, gamma)


def meanfield_trial(setup: Setup, seed: int, probes: int = 32) -> dict:
    """Moments of the learning-rate-scaled Hessian ``w H`` of the rescaled network.

    With output ``f / sqrt(w)`` the Hessian is ``I / w + S / sqrt(w)`` in the
    unscaled parts, so ``w H = I + sqrt(w) S``.

    Returns
    -------
    dict
        ``trH_over_sqrt_w`` (``Tr(wH) / sqrt(w)``), ``trH2_over_w``
        (``Tr((wH)^2) / w``) and the gradient ``grad`` of the loss.
    """
    hidden = setup.widths[1:-1]
    if not hidden or len(set(hidden)) != 1:
        raise ConfigError("mean-field runs need a rectangular net with hidden layers")
    w = hidden[0]
    p = meanfield_rescale(init_params(setup.arch(), seed), w)
    eng = MomentEngine(p, setup.X, setup.loss(), probes=probes, seed=seed)
    m = eng.moments(2)
    return {
        "trH_over_sqrt_w": float(w * m["trH"][0] / np.sqrt(w)),
        "trH2_over_w": float(w * w * m["trH"][1] / w),
        "grad": eng.grad.copy(),
    }
