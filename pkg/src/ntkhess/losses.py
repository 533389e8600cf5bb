"""Loss functionals ``C(Y) = (1/N) sum_i c_i(Y_i)`` with gradient and Hessian.

Outputs are flat vectors of length ``N * n_L`` ordered input-major, i.e.
``Y[i * n_L + k]`` is output ``k`` on input ``i``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, logsumexp, softmax

from .errors import ConfigError

__all__ = [
    "LossSpec",
    "make_loss",
    "loss_value",
    "loss_grad",
    "loss_hess",
    "loss_hess_diag",
    "bgoss_bound",
    "bgoss_bound_check",
]

KINDS = ("mse", "binary_ce", "softmax_ce")


@dataclass(frozen=True)
class LossSpec:
    """Loss kind with its labels.

    Attributes
    ----------
    kind : {"mse", "binary_ce", "softmax_ce"}
    labels : ndarray
        ``mse``: real targets of length ``N * n_L``. ``binary_ce``: ``+-1`` per
        example. ``softmax_ce``: class indices in ``0..c-1``.
    N, n_L : int
    """

    kind: str
    labels: np.ndarray
    N: int
    n_L: int

    @property
    def classes(self) -> int:
        return self.n_L if self.kind == "softmax_ce" else 0

    @property
    def size(self) -> int:
        return self.N * self.n_L


def make_loss(kind: str, labels, n_L: int | None = None) -> LossSpec:
    """Validate labels and build a :class:`LossSpec`.

    For ``mse`` the labels may be given as an ``(N, n_L)`` array.
    For ``softmax_ce`` ``n_L`` is the class count and must be given.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown loss {kind!r}; expected one of {', '.join(KINDS)}")
    y = np.asarray(labels)
    if kind == "mse":
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            n_L = 1 if n_L is None else int(n_L)
            if y.size % n_L:
                raise ConfigError("mse labels do not divide into n_L outputs")
            N = y.size // n_L
        elif y.ndim == 2:
            N, n_out = y.shape
            if n_L is not None and n_L != n_out:
                raise ConfigError(f"labels have {n_out} outputs, expected {n_L}")
            n_L = n_out
        else:
            raise ConfigError("mse labels must be 1D or 2D")
        return LossSpec(kind, y.reshape(-1).copy(), int(N), int(n_L))
    y = y.reshape(-1)
    if kind == "binary_ce":
        if n_L not in (None, 1):
            raise ConfigError("binary_ce requires n_L = 1")
        if not np.all(np.isin(y, (-1, 1))):
            raise ConfigError("binary_ce labels must be +-1")
        return LossSpec(kind, y.astype(float), y.size, 1)
    if n_L is None or int(n_L) < 2:
        raise ConfigError("softmax_ce requires n_L = c >= 2 classes")
    yi = y.astype(int)
    if not np.array_equal(yi, y) or np.any(yi < 0) or np.any(yi >= int(n_L)):
        raise ConfigError(f"softmax_ce labels must be integers in 0..{int(n_L) - 1}")
    return LossSpec(kind, yi, yi.size, int(n_L))


def _check(spec, Y):
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if Y.size != spec.size:
        raise ConfigError(f"expected {spec.size} outputs, got {Y.size}")
    return Y


def loss_value(spec: LossSpec, Y) -> float:
    """``C(Y)``."""
    Y = _check(spec, Y)
    N = spec.N
    if spec.kind == "mse":
        r = Y - spec.labels
        return float(r @ r) / (2 * N)
    if spec.kind == "binary_ce":
        return float(-log_expit(spec.labels * Y).sum()) / N
    Z = Y.reshape(N, spec.n_L)
    return float((logsumexp(Z, axis=1) - Z[np.arange(N), spec.labels]).sum()) / N


def loss_grad(spec: LossSpec, Y) -> np.ndarray:
    """Gradient of ``C`` with respect to the flat output vector."""
    Y = _check(spec, Y)
    N = spec.N
    if spec.kind == "mse":
        return (Y - spec.labels) / N
    if spec.kind == "binary_ce":
        return -spec.labels * expit(-spec.labels * Y) / N
    P = softmax(Y.reshape(N, spec.n_L), axis=1)
    P[np.arange(N), spec.labels] -= 1.0
    return P.reshape(-1) / N


def loss_hess_diag(spec: LossSpec, Y) -> np.ndarray:
    """Diagonal of the Hessian (the full Hessian for mse and binary_ce)."""
    Y = _check(spec, Y)
    N = spec.N
    if spec.kind == "mse":
        return np.full(Y.size, 1.0 / N)
    if spec.kind == "binary_ce":
        # sigma(Y) sigma(-Y) = 1 / (2 + e^Y + e^-Y), independent of the labels
        return expit(Y) * expit(-Y) / N
    P = softmax(Y.reshape(N, spec.n_L), axis=1)
    return (P * (1.0 - P)).reshape(-1) / N


def loss_hess(spec: LossSpec, Y) -> np.ndarray:
    """Hessian of ``C`` with respect to the flat output vector."""
    Y = _check(spec, Y)
    if spec.kind != "softmax_ce":
        return np.diag(loss_hess_diag(spec, Y))
    N, c = spec.N, spec.n_L
    P = softmax(Y.reshape(N, c), axis=1)
    H = np.zeros((Y.size, Y.size))
    for i in range(N):
        s = slice(i * c, (i + 1) * c)
        H[s, s] = (np.diag(P[i]) - np.outer(P[i], P[i])) / N
    return H


def bgoss_bound(spec: LossSpec) -> float:
    """Uniform gradient-norm bound ``1/sqrt(N)`` (binary) or ``sqrt(2c/N)`` (softmax)."""
    if spec.kind == "binary_ce":
        return 1.0 / np.sqrt(spec.N)
    if spec.kind == "softmax_ce":
        return np.sqrt(2.0 * spec.classes / spec.N)
    raise ConfigError("mse has no uniform gradient bound (it grows with the residual)")


def bgoss_bound_check(spec: LossSpec, samples) -> dict:
    """Compare gradient norms over sample outputs with the uniform bound.

    Returns
    -------
    dict
        ``bound``, ``max_norm``, ``mean_norm``, ``margin`` (bound minus max),
        ``violations`` (count of samples above the bound) and ``n``.
    """
    bound = bgoss_bound(spec)
    norms = np.array([np.linalg.norm(loss_grad(spec, y)) for y in samples])
    return {
        "bound": float(bound),
        "max_norm": float(norms.max(initial=0.0)),
        "mean_norm": float(norms.mean()) if norms.size else 0.0,
        "margin": float(bound - norms.max(initial=0.0)),
        "violations": int(np.sum(norms > bound)),
        "n": int(norms.size),
    }
