"""Second derivatives of the network outputs with respect to the parameters.

The workhorse is a forward-over-reverse pass: for output cotangents ``c`` and
a block of parameter directions ``V`` it returns ``sum_r c_r Hf_r V`` without
forming any ``P x P`` object. Dense matrices and the full ``P x P x N n_L``
tensor are assembled from it only below configurable caps.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..losses import LossSpec, loss_grad, loss_hess
from .net import NetParams, _as_batch, forward, jacobian

__all__ = [
    "TENSOR_CAP",
    "MATRIX_CAP",
    "hvp",
    "hessian_vector",
    "hessian",
    "s_matrix",
    "HessianBundle",
    "assemble",
    "g_trace",
    "numerical_rank",
]

TENSOR_CAP = 200
MATRIX_CAP = 6000
_BLOCK = 256


def _rows(params, X):
    # every input repeated once per output, seeded with the matching unit vector
    nL = params.arch.n_out
    return np.repeat(X, nL, axis=0), np.tile(np.eye(nL), (X.shape[0], 1))


def hvp(params: NetParams, X, seeds, V, reduce: bool = True, cache=None):
    """Hessian-vector products of output combinations.

    Parameters
    ----------
    params : NetParams
    X : array_like
        Inputs ``(R, n_0)``.
    seeds : array_like
        Output cotangents ``(R, n_L)``; row ``r`` weights the outputs on input ``r``.
    V : array_like
        Directions ``(P,)`` or ``(P, m)``.
    reduce : bool
        Sum over rows (default) or keep them separate.

    Returns
    -------
    ndarray
        ``(P, m)`` (or ``(P,)``) if ``reduce``; otherwise ``(R, P, m)``
        (or ``(R, P)``), the ``r``-th slice being ``Hess(seeds_r . f(x_r)) V``.
    """
    arch = params.arch
    X = _as_batch(params, X)
    V = np.asarray(V, dtype=float)
    vec = V.ndim == 1
    if vec:
        V = V[:, None]
    if V.shape[0] != arch.P:
        raise ConfigError(f"direction length {V.shape[0]} does not match P = {arch.P}")
    m = V.shape[1]
    R = X.shape[0]
    pre, act, _ = cache if cache is not None else forward(params, X)
    nl, beta = arch.nl, arch.beta
    layers = params.layers()
    dlayers = [
        (Vt[:, ws:bs].reshape(m, arch.widths[l + 1], arch.widths[l]), Vt[:, bs:end])
        for Vt in [np.ascontiguousarray(V.T)]
        for l, (ws, bs, end) in enumerate(arch.offsets())
    ]
    sq = [np.sqrt(n) for n in arch.widths]
    d1 = [nl.eval_k(1, h) for h in pre[:-1]]

    # tangent of the forward pass
    dpre = []
    dact = [np.zeros((m, R, arch.widths[0]))]
    for l, (W, _) in enumerate(layers):
        dW, db = dlayers[l]
        dh = (dact[l] @ W.T + np.matmul(act[l], dW.transpose(0, 2, 1))) / sq[l] + beta * db[:, None, :]
        dpre.append(dh)
        if l < arch.L - 1:
            dact.append(d1[l] * dh)

    # reverse pass and its tangent
    g = arch.out_scale * np.asarray(seeds, dtype=float).reshape(R, arch.n_out)
    dg = np.zeros((m, R, arch.n_out))
    shape = (arch.P, m) if reduce else (R, arch.P, m)
    out = np.empty(shape)
    for l in range(arch.L - 1, -1, -1):
        ws, bs, end = arch.offsets()[l]
        W, _ = layers[l]
        dW, _ = dlayers[l]
        if reduce:
            gw = np.matmul(dg.transpose(0, 2, 1), act[l]) + np.matmul(g.T, dact[l])
            out[ws:bs] = gw.reshape(m, -1).T / sq[l]
            out[bs:end] = beta * dg.sum(axis=1).T
        else:
            gw = dg[:, :, :, None] * act[l][None, :, None, :] + g[None, :, :, None] * dact[l][:, :, None, :]
            out[:, ws:bs] = gw.reshape(m, R, -1).transpose(1, 2, 0) / sq[l]
            out[:, bs:end] = beta * dg.transpose(1, 2, 0)
        if l > 0:
            q = g @ W / sq[l]
            dq = (dg @ W + np.matmul(g, dW)) / sq[l]
            dg = dq * d1[l - 1] + (q * nl.eval_k(2, pre[l - 1])) * dpre[l - 1]
            g = q * d1[l - 1]
    if vec:
        out = out[..., 0]
    return out


def hessian_vector(params: NetParams, X, v) -> np.ndarray:
    """Directional second derivatives ``(Hf_r v)`` for every flat output ``r``; shape ``(N n_L, P)``."""
    X = _as_batch(params, X)
    Xr, seeds = _rows(params, X)
    return hvp(params, Xr, seeds, np.asarray(v, dtype=float), reduce=False)


def hessian(params: NetParams, X, cap: int = TENSOR_CAP) -> np.ndarray:
    """Full output Hessian tensor ``HY`` of shape ``(P, P, N n_L)``.

    Raises
    ------
    ConfigError
        If ``P`` exceeds ``cap``; use :func:`hvp` (directional mode) instead.
    """
    P = params.arch.P
    if P > cap:
        raise ConfigError(f"P = {P} exceeds the full-tensor cap {cap}; use directional mode (hvp)")
    X = _as_batch(params, X)
    Xr, seeds = _rows(params, X)
    T = hvp(params, Xr, seeds, np.eye(P), reduce=False)  # (R, P, P)
    T = 0.5 * (T + T.transpose(0, 2, 1))
    return np.ascontiguousarray(T.transpose(1, 2, 0))


def s_matrix(params: NetParams, X, c, cap: int = MATRIX_CAP, cache=None) -> np.ndarray:
    """Dense ``S = sum_r c_r Hf_r`` for flat cotangent ``c`` of length ``N n_L``."""
    P = params.arch.P
    if P > cap:
        raise ConfigError(f"P = {P} exceeds the dense-matrix cap {cap}; use directional mode")
    X = _as_batch(params, X)
    seeds = np.asarray(c, dtype=float).reshape(X.shape[0], params.arch.n_out)
    cache = cache or forward(params, X)
    S = np.empty((P, P))
    for lo in range(0, P, _BLOCK):
        hi = min(P, lo + _BLOCK)
        E = np.zeros((P, hi - lo))
        E[np.arange(lo, hi), np.arange(hi - lo)] = 1.0
        S[:, lo:hi] = hvp(params, X, seeds, E, cache=cache)
    return 0.5 * (S + S.T)


@dataclass
class HessianBundle:
    """Loss Hessian ``H = I + S`` at one parameter value.

    Attributes
    ----------
    DY : ndarray
        Jacobian ``(N n_L, P)``.
    HY : ndarray or None
        Output Hessian tensor ``(P, P, N n_L)``; ``None`` above the tensor cap.
    I, S, H : ndarray
        ``DY^T H_C DY``, ``grad C . HY`` and their sum.
    Y : ndarray
        Flat outputs.
    grad : ndarray
        ``grad C(Y)``.
    hc : ndarray
        Loss Hessian in output space.
    """

    DY: np.ndarray
    HY: np.ndarray | None
    I: np.ndarray
    S: np.ndarray
    H: np.ndarray
    Y: np.ndarray
    grad: np.ndarray
    hc: np.ndarray
    hidden: tuple = ()

    @property
    def rank_bounds(self):
        """``(Rank(I) bound, Rank(S) bound)``."""
        M = self.DY.shape[0]
        return M, 2 * sum(self.hidden) * M


def assemble(params: NetParams, X, loss: LossSpec, tensor_cap: int = TENSOR_CAP, matrix_cap: int = MATRIX_CAP) -> HessianBundle:
    """Assemble ``I``, ``S`` and ``H`` for the loss ``theta -> C(Y(theta))``."""
    P = params.arch.P
    if P > matrix_cap:
        raise ConfigError(f"P = {P} exceeds the dense-matrix cap {matrix_cap}; use probes.MomentEngine")
    X = _as_batch(params, getattr(X, "inputs", X))
    cache = forward(params, X)
    Y = cache[2].reshape(-1)
    DY = jacobian(params, X, cache=cache)
    grad = loss_grad(loss, Y)
    hc = loss_hess(loss, Y)
    I = DY.T @ hc @ DY
    I = 0.5 * (I + I.T)
    HY = None
    if P <= tensor_cap:
        HY = hessian(params, X, cap=tensor_cap)
        S = HY @ grad
        S = 0.5 * (S + S.T)
    else:
        S = s_matrix(params, X, grad, cap=matrix_cap, cache=cache)
    return HessianBundle(DY, HY, I, S, I + S, Y, grad, hc, params.arch.hidden)


def numerical_rank(A, rel_tol: float = 1e-8) -> int:
    """Number of singular values above ``rel_tol`` times the largest."""
    s = np.linalg.svd(np.asarray(A), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def g_trace(params: NetParams, X) -> np.ndarray:
    """Parameter-space Laplacian ``g(x) = sum_p d^2 f(x) / d theta_p^2``, shape ``(N, n_L)``.

    Propagates, per input, the Laplacian ``g`` of every preactivation together
    with the Gram matrix ``K`` of their parameter gradients:

        g^(l+1) = W (s'(h) g + s''(h) diag K^(l)) / sqrt(n_l)
        K^(l+1) = W D K^(l) D W^T / n_l + (|a^(l)|^2 / n_l + beta^2) Id,  D = diag s'(h)

    Only the diagonal of ``K`` is needed for the last step, so two-hidden-layer
    networks never form a full ``K``.
    """
    arch = params.arch
    X = _as_batch(params, X)
    pre, act, _ = forward(params, X)
    nl, b2 = arch.nl, arch.beta**2
    layers = params.layers()
    N = X.shape[0]
    g = np.zeros((N, arch.widths[1]))
    c1 = (X * X).sum(axis=1) / arch.widths[0] + b2
    diagK = np.repeat(c1[:, None], arch.widths[1], axis=1)
    K = None  # None means K = diagK * Id
    for l in range(1, arch.L):
        W, _ = layers[l]
        h = pre[l - 1]
        s1, s2 = nl.eval_k(1, h), nl.eval_k(2, h)
        n = arch.widths[l]
        g = (s1 * g + s2 * diagK) @ W.T / np.sqrt(n)
        if l == arch.L - 1:
            break
        extra = (act[l] * act[l]).sum(axis=1) / n + b2
        if l + 1 == arch.L - 1:
            # only the diagonal of the next Gram is used
            if K is None:
                diagK = (s1 * s1 * diagK) @ (W * W).T / n + extra[:, None]
            else:
                DKD = s1[:, :, None] * K * s1[:, None, :]
                diagK = np.einsum("ikm,km->ik", np.matmul(W, DKD), W) / n + extra[:, None]
            continue
        if K is None:
            WD = W[None, :, :] * s1[:, None, :]  # (N, n_{l+1}, n_l)
            K = np.matmul(WD * diagK[:, None, :], WD.transpose(0, 2, 1)) / n
        else:
            DKD = s1[:, :, None] * K * s1[:, None, :]
            K = np.matmul(np.matmul(W, DKD), W.T) / n
        idx = np.arange(K.shape[1])
        K[:, idx, idx] += extra[:, None]
        diagK = K[:, idx, idx].copy()
    return arch.out_scale * g
