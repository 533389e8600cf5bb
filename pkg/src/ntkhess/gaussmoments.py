"""Bivariate Gaussian expectations ``E[f(a0) g(a1)]`` by Gauss-Hermite quadrature.

The pair ``(a0, a1)`` is centered Gaussian with covariance
``[[k00, k01], [k01, k11]]`` and is written through its Cholesky factor,

    a0 = sqrt(k00) z0,
    a1 = (k01 / sqrt(k00)) z0 + sqrt(k11 - k01^2 / k00) z1,

with ``z0, z1`` independent standard normals integrated by a tensor rule.

Softplus derivatives have poles at ``+-i pi``; after scaling by the standard
deviation they move towards the real axis and a fixed-size Hermite rule loses
its spectral accuracy. The number of nodes per axis therefore grows as
``order * max(1, 2 * v)`` with ``v`` the largest variance involved, which
keeps order doubling stable far beyond ``1e-9`` for variances up to 10.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_hermite

from .activations import NonlinPack
from .errors import ConfigError, DomainError

__all__ = [
    "Cov2",
    "QuadRule",
    "hermite_rule",
    "effective_order",
    "bi_expect",
    "expect_1d",
    "bi_expect_table",
    "DEFAULT_ORDER",
    "PSD_TOL",
]

DEFAULT_ORDER = 40
PSD_TOL = 1e-12
DEGENERATE_VAR = 1e-14
# variance at which the adaptive rule starts adding nodes
_V_REF = 0.5
_CHUNK_NODES = 2_000_000


@dataclass(frozen=True)
class Cov2:
    """Covariance of a centered Gaussian pair."""

    k00: float
    k01: float
    k11: float

    def clamped(self) -> "Cov2":
        """Validate PSD up to ``PSD_TOL`` and clamp to the PSD cone."""
        k00, k01, k11 = _clamp(np.float64(self.k00), np.float64(self.k01), np.float64(self.k11))
        return Cov2(float(k00), float(k01), float(k11))


@dataclass(frozen=True)
class QuadRule:
    """Gauss-Hermite rule for the weight ``exp(-x^2)``.

    Attributes
    ----------
    nodes, weights : ndarray
        Physicists' Hermite nodes and weights; the weights sum to ``sqrt(pi)``.
    order : int
        Number of nodes.
    """

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def std_normal(self):
        """Nodes and normalized weights for ``E[h(Z)]`` with ``Z ~ N(0, 1)``."""
        return _std_normal(self.order)

    def refined(self, vmax: float) -> "QuadRule":
        """Rule with enough nodes for variances up to ``vmax``."""
        n = effective_order(self.order, vmax)
        return self if n == self.order else hermite_rule(n)


@lru_cache(maxsize=64)
def _hermite(order: int):
    x, w = roots_hermite(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=64)
def _std_normal(order: int):
    x, w = _hermite(order)
    z = np.sqrt(2.0) * x
    p = w / np.sqrt(np.pi)
    z.setflags(write=False)
    p.setflags(write=False)
    return z, p


def hermite_rule(order: int = DEFAULT_ORDER) -> QuadRule:
    """Gauss-Hermite rule with ``order`` nodes (exact up to degree ``2 order - 1``)."""
    order = int(order)
    if order < 2:
        raise ConfigError(f"quadrature order must be >= 2, got {order}")
    x, w = _hermite(order)
    return QuadRule(x, w, order)


def effective_order(order: int, vmax: float) -> int:
    """Nodes per axis used for a covariance whose largest variance is ``vmax``."""
    return int(np.ceil(order * max(1.0, float(vmax) / _V_REF)))


def _clamp(k00, k01, k11):
    k00 = np.asarray(k00, dtype=float)
    k01 = np.asarray(k01, dtype=float)
    k11 = np.asarray(k11, dtype=float)
    if np.any(k00 < -PSD_TOL) or np.any(k11 < -PSD_TOL):
        raise DomainError("negative variance in covariance")
    k00 = np.maximum(k00, 0.0)
    k11 = np.maximum(k11, 0.0)
    bound = np.sqrt(k00 * k11)
    excess = np.abs(k01) - bound
    if np.any(excess * (np.abs(k01) + bound) > PSD_TOL):
        i = np.unravel_index(np.argmax(excess), np.shape(excess)) if np.ndim(excess) else ()
        raise DomainError(
            f"covariance not PSD: k01^2 - k00 k11 = {float(np.asarray(k01**2 - k00 * k11)[i]):.3e}"
        )
    k01 = np.clip(k01, -bound, bound)
    return k00, k01, k11


def _factor(k00, k01, k11):
    # coefficients of a0 = r0 z0, a1 = c z0 + s z1
    r0 = np.sqrt(k00)
    live = k00 >= DEGENERATE_VAR
    c = np.where(live, k01 / np.where(live, r0, 1.0), 0.0)
    r0 = np.where(live, r0, 0.0)
    s = np.sqrt(np.maximum(k11 - c * c, 0.0))
    return r0, c, s


def _key(f):
    pack, k = f
    return (pack.id, pack.scale, pack.shift, k)


def expect_1d(f, var: float, rule: QuadRule | None = None) -> float:
    """``E[f(a)]`` for ``a ~ N(0, var)``; ``f`` is a ``(pack, order)`` pair."""
    rule = rule or hermite_rule()
    pack, k = f
    if var < -PSD_TOL:
        raise DomainError("negative variance")
    var = max(float(var), 0.0)
    z, p = _std_normal(effective_order(rule.order, var))
    return float(p @ np.asarray(pack.eval_k(k, np.sqrt(var) * z)))


def bi_expect(f, g, K: Cov2, rule: QuadRule | None = None) -> float:
    """Gaussian expectation ``E[f(a0) g(a1)]``.

    Parameters
    ----------
    f, g : tuple of (NonlinPack, int)
        Nonlinearity and derivative order for each coordinate.
    K : Cov2
        Covariance of ``(a0, a1)``.
    rule : QuadRule, optional
        Base rule; defaults to ``hermite_rule(DEFAULT_ORDER)``.

    Returns
    -------
    float

    Raises
    ------
    DomainError
        If ``K`` is not PSD up to ``PSD_TOL``.
    """
    rule = rule or hermite_rule()
    if rule.order < 2:
        raise ConfigError("quadrature order must be >= 2")
    K = K.clamped()
    k00, k01, k11 = K.k00, K.k01, K.k11
    # canonical orientation so that swapping (f, K) with (g, K^T) is bit-exact
    if k00 < k11 or (k00 == k11 and _key(f) > _key(g)):
        f, g, k00, k11 = g, f, k11, k00
    (pf, kf), (pg, kg) = f, g
    n = effective_order(rule.order, max(k00, k11))
    z, p = _std_normal(n)
    if k00 < DEGENERATE_VAR:
        # both variances vanish (k00 is the larger one)
        return float(pf.eval_k(kf, 0.0) * pg.eval_k(kg, 0.0))
    r0, c, s = (float(v) for v in _factor(k00, k01, k11))
    fa = np.asarray(pf.eval_k(kf, r0 * z))
    if s == 0.0:
        return float(p @ (fa * np.asarray(pg.eval_k(kg, c * z))))
    a1 = c * z[:, None] + s * z[None, :]
    ga = np.asarray(pg.eval_k(kg, a1))
    return float(p @ (fa * (ga @ p)))


def bi_expect_table(pack: NonlinPack, pairs, k00, k01, k11, rule: QuadRule | None = None):
    """Vectorized ``E[pack^(i)(a0) pack^(j)(a1)]`` for many covariances at once.

    Parameters
    ----------
    pack : NonlinPack
    pairs : sequence of (int, int)
        Derivative orders ``(i, j)``; ``i`` acts on ``a0`` and ``j`` on ``a1``.
    k00, k01, k11 : array_like
        Broadcast-compatible covariance entries.
    rule : QuadRule, optional

    Returns
    -------
    ndarray
        Shape ``(len(pairs),) + broadcast shape``.
    """
    rule = rule or hermite_rule()
    k00, k01, k11 = np.broadcast_arrays(*_clamp(k00, k01, k11))
    shape = k00.shape
    k00, k01, k11 = k00.ravel(), k01.ravel(), k11.ravel()
    pairs = [tuple(int(v) for v in q) for q in pairs]
    m = k00.size
    out = np.empty((len(pairs), m))
    if m == 0:
        return out.reshape((len(pairs),) + shape)
    vmax = float(max(k00.max(), k11.max()))
    n = effective_order(rule.order, vmax)
    z, p = _std_normal(n)
    r0, c, s = _factor(k00, k01, k11)
    left = sorted({i for i, _ in pairs})
    right = sorted({j for _, j in pairs})
    step = max(1, _CHUNK_NODES // (n * n))
    for lo in range(0, m, step):
        hi = min(m, lo + step)
        a0 = r0[lo:hi, None] * z[None, :]
        a1 = c[lo:hi, None, None] * z[None, :, None] + s[lo:hi, None, None] * z[None, None, :]
        F = {i: np.asarray(pack.eval_k(i, a0)) * p for i in left}
        G = {j: np.asarray(pack.eval_k(j, a1)) @ p for j in right}
        for q, (i, j) in enumerate(pairs):
            out[q, lo:hi] = np.einsum("mi,mi->m", F[i], G[j])
    return out.reshape((len(pairs),) + shape)
