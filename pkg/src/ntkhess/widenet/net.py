"""Fully connected network in the NTK parametrization.

Layer maps are ``h^(l+1) = W^(l) a^(l) / sqrt(n_l) + beta b^(l)`` with
``a^(0) = x``, ``a^(l) = sigma(h^(l))`` and output ``f = h^(L)`` (no final
nonlinearity). All parameters start iid standard normal.

The flat parameter vector stores each layer as ``W^(l)`` (row-major,
``n_{l+1} x n_l``) followed by ``b^(l)``.
"""

from dataclasses import dataclass, replace

import numpy as np

from ..activations import NonlinPack, make_nonlin
from ..errors import ConfigError

__all__ = [
    "Arch",
    "NetParams",
    "init_params",
    "forward",
    "jacobian",
    "empirical_ntk",
    "vjp",
    "outputs",
    "meanfield_rescale",
    "rectangular",
]


@dataclass(frozen=True)
class Arch:
    """Architecture descriptor.

    Attributes
    ----------
    widths : tuple of int
        ``(n_0, n_1, ..., n_L)``.
    beta : float
        Bias scale.
    nl : NonlinPack
    out_scale : float
        Factor applied to the output (``1/sqrt(w)`` for the mean-field
        parametrization, 1 otherwise).
    """

    widths: tuple
    beta: float = 0.1
    nl: NonlinPack = None
    out_scale: float = 1.0

    def __post_init__(self):
        w = tuple(int(v) for v in self.widths)
        if len(w) < 2 or min(w) < 1:
            raise ConfigError(f"widths must list at least two positive sizes, got {self.widths}")
        object.__setattr__(self, "widths", w)
        if self.nl is None:
            object.__setattr__(self, "nl", make_nonlin("softplus"))
        elif isinstance(self.nl, str):
            object.__setattr__(self, "nl", make_nonlin(self.nl))

    @property
    def L(self) -> int:
        return len(self.widths) - 1

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    @property
    def hidden(self) -> tuple:
        return self.widths[1:-1]

    @property
    def P(self) -> int:
        w = self.widths
        return sum((w[l] + 1) * w[l + 1] for l in range(self.L))

    def offsets(self):
        """Per layer ``(w_start, b_start, end)`` indices in the flat vector."""
        out, pos = [], 0
        w = self.widths
        for l in range(self.L):
            ws = pos
            bs = ws + w[l] * w[l + 1]
            pos = bs + w[l + 1]
            out.append((ws, bs, pos))
        return out


def rectangular(n0: int, width: int, L: int, n_out: int = 1, **kw) -> Arch:
    """Arch with ``L - 1`` hidden layers of equal width."""
    return Arch((int(n0),) + (int(width),) * (int(L) - 1) + (int(n_out),), **kw)


@dataclass
class NetParams:
    """Flat parameter vector with its architecture."""

    theta: np.ndarray
    arch: Arch

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (self.arch.P,):
            raise ConfigError(f"theta has shape {self.theta.shape}, expected ({self.arch.P},)")

    def layers(self, theta=None):
        """List of ``(W, b)`` views into ``theta`` (defaults to the own vector)."""
        th = self.theta if theta is None else theta
        w = self.arch.widths
        out = []
        for l, (ws, bs, end) in enumerate(self.arch.offsets()):
            out.append((th[ws:bs].reshape(w[l + 1], w[l]), th[bs:end]))
        return out

    def copy(self) -> "NetParams":
        return NetParams(self.theta.copy(), self.arch)


def init_params(arch: Arch, seed=None) -> NetParams:
    """Draw all parameters iid ``N(0, 1)`` from ``numpy.random.default_rng(seed)``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return NetParams(rng.standard_normal(arch.P), arch)


def _as_batch(params, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != params.arch.widths[0]:
        raise ConfigError(f"input dimension {X.shape[1]} does not match n_0 = {params.arch.widths[0]}")
    return X


def forward(params: NetParams, X):
    """Evaluate the network on a batch.

    Parameters
    ----------
    params : NetParams
    X : array_like
        Inputs, shape ``(N, n_0)`` or ``(n_0,)``.

    Returns
    -------
    pre : list of ndarray
        Preactivations ``h^(1..L)``, each ``(N, n_l)``.
    act : list of ndarray
        Activations ``a^(0..L-1)``, with ``a^(0) = X``.
    f : ndarray
        Outputs ``(N, n_L)`` including ``out_scale``.
    """
    arch = params.arch
    X = _as_batch(params, X)
    beta, nl = arch.beta, arch.nl
    pre, act = [], [X]
    a = X
    for l, (W, b) in enumerate(params.layers()):
        h = a @ W.T / np.sqrt(arch.widths[l]) + beta * b
        pre.append(h)
        if l < arch.L - 1:
            a = nl.eval_k(0, h)
            act.append(a)
    return pre, act, arch.out_scale * pre[-1]


def outputs(params: NetParams, X) -> np.ndarray:
    """Flat output vector ``Y`` of length ``N n_L`` (input-major)."""
    return forward(params, X)[2].reshape(-1)


def jacobian(params: NetParams, X, cache=None) -> np.ndarray:
    """Jacobian ``DY`` of the flat outputs, shape ``(N n_L, P)``."""
    arch = params.arch
    X = _as_batch(params, X)
    pre, act, _ = cache if cache is not None else forward(params, X)
    N, nL = X.shape[0], arch.n_out
    J = np.empty((N * nL, arch.P))
    delta = np.broadcast_to(arch.out_scale * np.eye(nL), (N, nL, nL))
    layers = params.layers()
    offs = arch.offsets()
    for l in range(arch.L - 1, -1, -1):
        ws, bs, end = offs[l]
        s = np.sqrt(arch.widths[l])
        gw = delta[:, :, :, None] * (act[l] / s)[:, None, None, :]
        J[:, ws:bs] = gw.reshape(N * nL, -1)
        J[:, bs:end] = arch.beta * delta.reshape(N * nL, -1)
        if l > 0:
            W = layers[l][0]
            delta = (delta @ W) / s * arch.nl.eval_k(1, pre[l - 1])[:, None, :]
    return J


def vjp(params: NetParams, X, seeds, cache=None) -> np.ndarray:
    """``DY^T c`` for output cotangents ``seeds`` of shape ``(N, n_L)``; no Jacobian is formed."""
    arch = params.arch
    X = _as_batch(params, X)
    pre, act, _ = cache if cache is not None else forward(params, X)
    g = arch.out_scale * np.asarray(seeds, dtype=float).reshape(X.shape[0], arch.n_out)
    out = np.empty(arch.P)
    layers = params.layers()
    for l in range(arch.L - 1, -1, -1):
        ws, bs, end = arch.offsets()[l]
        s = np.sqrt(arch.widths[l])
        out[ws:bs] = (g.T @ act[l] / s).ravel()
        out[bs:end] = arch.beta * g.sum(axis=0)
        if l > 0:
            g = (g @ layers[l][0]) / s * arch.nl.eval_k(1, pre[l - 1])
    return out


def empirical_ntk(DY) -> np.ndarray:
    """Finite-width NTK Gram ``DY DY^T``."""
    DY = np.asarray(DY)
    return DY @ DY.T


def meanfield_rescale(params: NetParams, w: float) -> NetParams:
    """Same parameters with the output divided by ``sqrt(w)``."""
    if w <= 0:
        raise ConfigError("w must be positive")
    arch = replace(params.arch, out_scale=params.arch.out_scale / np.sqrt(w))
    return NetParams(params.theta, arch)
