"""Infinite-width predictions for the loss Hessian ``H = I + S``.

Gradient flow on the parameters drives the training-set outputs ``Y`` and the
Laplacian vector ``G`` through

    dY/dt = -Theta grad C(Y),    dG/dt = -Lam grad C(Y),

with the NTK Gram ``Theta`` and ``Lam`` constant in the limit. The moments of
``H`` are ``Tr(I^k) = Tr((H_C Theta)^k)``, ``Tr(S) = G' grad C``,
``Tr(S^2) = grad C' Ups grad C`` and ``Tr(S^k) = 0`` for ``k >= 3``.

For the MSE ``C(Y) = |Y - Y*|^2 / (2N)`` everything is explicit in terms of
``E(t) = exp(-t Theta / N)`` and the initial residual ``r = Y* - Y(0)``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .kernels import KernelStack, gram
from .losses import LossSpec, loss_grad, loss_hess, loss_value
from .spectral import expm_scaled, flow_integral, sym_eig

__all__ = [
    "Grams",
    "FlowState",
    "MomentPrediction",
    "grams_from_stack",
    "predict_trI",
    "sample_init_pair",
    "ode_flow",
    "mse_flow",
    "predict_S_moments_mse",
    "expected_S_moments_mse",
    "predict_trH",
    "predict_moments",
    "meanfield_predictions",
]


def _m(A):
    return np.asarray(getattr(A, "entries", A), dtype=float)


@dataclass(frozen=True)
class Grams:
    """Gram matrices of the limiting kernels on one dataset (``N n_L`` square)."""

    theta: np.ndarray
    sigma: np.ndarray
    upsilon: np.ndarray
    xi: np.ndarray
    phi: np.ndarray
    lam: np.ndarray
    N: int
    n_L: int


def grams_from_stack(stack: KernelStack, n_L: int = 1) -> Grams:
    """Expand the output-layer tables of a full :class:`KernelStack`."""
    if stack.upsilon is None or stack.lam is None:
        raise ConfigError("kernel stack lacks second-order tables; use kernels.compute_kernels")
    g = lambda T: gram(T, n_L).entries  # noqa: E731
    return Grams(g(stack.ntk), g(stack.nngp), g(stack.upsilon), g(stack.xi), g(stack.phi), g(stack.lam), stack.N, int(n_L))


@dataclass
class FlowState:
    """Limiting training-set outputs ``Y`` and Laplacians ``G`` at time ``t``."""

    t: float
    Y: np.ndarray
    G: np.ndarray


@dataclass
class MomentPrediction:
    """Predicted moments on a time grid.

    ``trI``, ``trS`` and ``trH`` have shape ``(len(t), k_max)`` with column
    ``k - 1`` holding the ``k``-th moment. ``trS[:, k-1]`` is zero for ``k >= 3``.
    """

    t: np.ndarray
    trI: np.ndarray
    trS: np.ndarray
    trH: np.ndarray
    E_trS1: np.ndarray | None = None
    E_trS2: np.ndarray | None = None
    zero_S_moments: tuple = field(default=())

    @property
    def trS1(self):
        return self.trS[:, 0]

    @property
    def trS2(self):
        return self.trS[:, 1] if self.trS.shape[1] > 1 else None


def predict_trI(loss: LossSpec, theta_gram, Y, k_max: int) -> np.ndarray:
    """Limits of ``Tr(I^k)`` for ``k = 1..k_max``: ``Tr((H_C(Y) Theta)^k)``."""
    if int(k_max) < 1:
        raise ConfigError("k_max must be >= 1")
    T = _m(theta_gram)
    A = loss_hess(loss, Y) @ T
    out = np.empty(int(k_max))
    P = np.eye(T.shape[0])
    for k in range(int(k_max)):
        P = P @ A
        out[k] = np.trace(P)
    return out


def sample_init_pair(sigma_gram, phi_gram, xi_gram, seed=None) -> FlowState:
    """Draw ``(G(0), Y(0))`` from the joint Gaussian with covariances ``Xi``, ``Phi``, ``Sigma``.

    The stacked covariance ``[[Xi, Phi], [Phi', Sigma]]`` is factored by an
    eigendecomposition; eigenvalues down to ``-1e-8`` times the largest are
    clamped to zero.

    Raises
    ------
    DomainError
        If a more negative eigenvalue is found.
    """
    Xi, Phi, Sig = _m(xi_gram), _m(phi_gram), _m(sigma_gram)
    M = Sig.shape[0]
    C = np.block([[Xi, Phi], [Phi.T, Sig]])
    C = 0.5 * (C + C.T)
    e = sym_eig(C)
    lam = e.eigenvalues
    tol = 1e-8 * max(1.0, float(lam[0]))
    if lam[-1] < -tol:
        raise DomainError(f"joint covariance of (G, Y) is not PSD: eigenvalue {lam[-1]:.3e}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = rng.standard_normal(2 * M)
    v = e.eigenvectors @ (np.sqrt(np.clip(lam, 0.0, None)) * z)
    return FlowState(0.0, v[M:], v[:M])


def ode_flow(loss: LossSpec, theta_gram, lambda_gram, init: FlowState, T: float, steps: int):
    """Integrate the limiting ``(Y, G)`` flow with classical RK4.

    Returns
    -------
    list of FlowState
        ``steps + 1`` states from ``init.t`` to ``init.t + T``.

    Raises
    ------
    NumericalError
        If the state becomes non-finite (the message gives the time).
    """
    if int(steps) < 1:
        raise ConfigError("steps must be >= 1")
    Th, La = _m(theta_gram), _m(lambda_gram)
    h = float(T) / int(steps)

    def rhs(Y):
        g = loss_grad(loss, Y)
        return -Th @ g, -La @ g

    Y, G, t = np.array(init.Y, float), np.array(init.G, float), float(init.t)
    out = [FlowState(t, Y.copy(), G.copy())]
    c_prev = loss_value(loss, Y)
    warned = False
    for n in range(int(steps)):
        k1 = rhs(Y)
        k2 = rhs(Y + 0.5 * h * k1[0])
        k3 = rhs(Y + 0.5 * h * k2[0])
        k4 = rhs(Y + h * k3[0])
        Y = Y + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        G = G + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        t = init.t + (n + 1) * h
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(G))):
            raise NumericalError(f"flow diverged at t = {t:.6g}")
        c = loss_value(loss, Y)
        if c > c_prev * (1 + 1e-12) + 1e-15 and not warned:
            warnings.warn(f"loss increased at t = {t:.4g}; step size {h:.3g} may exceed the stability limit", RuntimeWarning, stacklevel=2)
            warned = True
        c_prev = c
        out.append(FlowState(t, Y.copy(), G.copy()))
    return out


def _mse_factors(theta_gram, t, N):
    e = sym_eig(_m(theta_gram))
    e = type(e)(e.eigenvalues / N, e.eigenvectors)  # Theta / N
    # Theta^-1 (I - E) = int_0^t E(s) ds / N
    return expm_scaled(e, t), flow_integral(e, t) / N


def mse_flow(theta_gram, lambda_gram, Y0, G0, Ystar, t, N: int) -> FlowState:
    """Closed-form MSE flow: ``Y = Y* - E r``, ``G = G0 + Lam Theta^-1 (I - E) r``."""
    E, F = _mse_factors(theta_gram, t, N)
    r = np.asarray(Ystar, float) - np.asarray(Y0, float)
    return FlowState(float(t), np.asarray(Ystar, float) - E @ r, np.asarray(G0, float) + _m(lambda_gram) @ (F @ r))


def predict_S_moments_mse(theta_gram, lambda_gram, upsilon_gram, Y0, G0, Ystar, t, N: int | None = None):
    """Pathwise limits of ``Tr(S(t))`` and ``Tr(S(t)^2)`` for the MSE.

    Parameters
    ----------
    theta_gram, lambda_gram, upsilon_gram : array_like
        ``N n_L`` square Gram matrices.
    Y0, G0 : array_like
        Initial outputs and Laplacians on the training set.
    Ystar : array_like
        Targets.
    t : float
    N : int, optional
        Number of inputs (defaults to the Gram size, i.e. ``n_L = 1``).

    Returns
    -------
    (float, float)
        ``-(1/N) G0' E r - (1/N) r' (I - E) Theta^-1 Lam' E r`` and
        ``(1/N^2) r' E Ups E r``.
    """
    Th = _m(theta_gram)
    N = Th.shape[0] if N is None else int(N)
    E, F = _mse_factors(Th, t, N)
    r = np.asarray(Ystar, float) - np.asarray(Y0, float)
    Er = E @ r
    tr1 = -(np.asarray(G0, float) @ Er) / N - (r @ (F @ (_m(lambda_gram).T @ Er))) / N
    tr2 = (Er @ (_m(upsilon_gram) @ Er)) / N**2
    return float(tr1), float(tr2)


def expected_S_moments_mse(theta_gram, lambda_gram, upsilon_gram, sigma_gram, phi_gram, Ystar, t, N: int | None = None):
    """Expectations over the initialization of the two MSE ``S`` moments.

    With ``R = Sigma + Y* Y*'`` (the second moment of ``r``):

        E Tr S   = -(1/N) Tr((I - E) Theta^-1 Lam' E R) + (1/N) Tr(E Phi')
        E Tr S^2 = (1/N^2) Tr(E Ups E R)
    """
    Th = _m(theta_gram)
    N = Th.shape[0] if N is None else int(N)
    E, F = _mse_factors(Th, t, N)
    ys = np.asarray(Ystar, float)
    R = _m(sigma_gram) + np.outer(ys, ys)
    e1 = -np.trace(F @ _m(lambda_gram).T @ E @ R) / N + np.trace(E @ _m(phi_gram).T) / N
    e2 = np.trace(E @ _m(upsilon_gram) @ E @ R) / N**2
    return float(e1), float(e2)


def predict_trH(loss: LossSpec, grams: Grams, state: FlowState, k_max: int) -> MomentPrediction:
    """Moments of ``H`` at one flow state: ``Tr(I^k)`` plus ``Tr(S) = G' grad C`` and ``Tr(S^2)``."""
    trI = predict_trI(loss, grams.theta, state.Y, k_max)
    g = loss_grad(loss, state.Y)
    trS = np.zeros(int(k_max))
    trS[0] = state.G @ g
    if k_max >= 2:
        trS[1] = g @ _m(grams.upsilon) @ g
    trH = trI + trS
    return MomentPrediction(np.array([state.t]), trI[None], trS[None], trH[None], zero_S_moments=tuple(range(3, int(k_max) + 1)))


def predict_moments(loss: LossSpec, grams: Grams, init: FlowState, times, k_max: int = 4, steps_per_unit: int = 1000) -> MomentPrediction:
    """Moment predictions along the flow on a time grid.

    MSE uses the closed forms (plus the expectations over the initialization);
    other losses integrate the flow with RK4 and read the moments off the
    states.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ConfigError("times must be nonnegative and nondecreasing")
    rows = []
    e1 = e2 = None
    if loss.kind == "mse":
        e1, e2 = np.empty(times.size), np.empty(times.size)
        for i, t in enumerate(times):
            st = mse_flow(grams.theta, grams.lam, init.Y, init.G, loss.labels, t, grams.N)
            rows.append(predict_trH(loss, grams, st, k_max))
            e1[i], e2[i] = expected_S_moments_mse(grams.theta, grams.lam, grams.upsilon, grams.sigma, grams.phi, loss.labels, t, grams.N)
    else:
        state = init
        for t in times:
            dt = t - state.t
            if dt > 0:
                steps = max(1, int(np.ceil(dt * steps_per_unit)))
                state = ode_flow(loss, grams.theta, grams.lam, state, dt, steps)[-1]
            rows.append(predict_trH(loss, grams, state, k_max))
    cat = lambda name: np.concatenate([getattr(r, name) for r in rows])  # noqa: E731
    return MomentPrediction(times, cat("trI"), cat("trS"), cat("trH"), e1, e2, rows[0].zero_S_moments)


def meanfield_predictions(xi_gram, upsilon_gram, gradC):
    """Mean-field limits: variance of ``Tr(H)/sqrt(w)`` and limit of ``Tr(H^2)/w``.

    Returns ``(grad' Xi grad, grad' Ups grad)``.
    """
    g = np.asarray(gradC, dtype=float).reshape(-1)
    Xi, Ups = _m(xi_gram), _m(upsilon_gram)
    if Xi.shape != (g.size, g.size) or Ups.shape != (g.size, g.size):
        raise ConfigError("gradient length does not match the Gram matrices")
    return float(g @ Xi @ g), float(g @ Ups @ g)
