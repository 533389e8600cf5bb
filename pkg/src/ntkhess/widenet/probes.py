"""Empirical spectral statistics of the loss Hessian ``H = I + S``.

Small networks use dense matrices from :func:`hessian.assemble`. Larger ones
go through :class:`MomentEngine`, which only needs the Jacobian ``J`` and
Hessian-vector products. With ``U = J'``, ``C = H_C`` and ``K = J J'``,

    B1 = S U,  B2 = S B1,  A1 = U' B1,  A2 = B1' B1,  A3 = B1' B2

give every mixed trace of ``I = U C U'`` and ``S`` up to fourth order exactly,
e.g. ``Tr(I S) = Tr(C A1)`` and ``Tr(I^2 S^2) = |I S|_F^2 = Tr(C K C A2)``.
Pure ``Tr(S^k)`` for ``k >= 2`` uses Rademacher probes; ``Tr(S) = G' grad C``
is exact through :func:`hessian.g_trace`.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from ..errors import ConfigError
from ..losses import LossSpec, loss_grad, loss_hess, loss_value
from .hessian import HessianBundle, g_trace, hvp
from .net import NetParams, _as_batch, forward, jacobian

__all__ = [
    "empirical_moments",
    "MomentEngine",
    "s_operator",
    "tensor_decay_probe",
    "rayleigh_profile",
    "loss_surface_slice",
    "empirical_upsilon",
]


def _powers_trace(A, k_max):
    out = np.empty(k_max)
    P = np.eye(A.shape[0])
    for k in range(k_max):
        P = P @ A
        out[k] = np.trace(P)
    return out


def empirical_moments(bundle: HessianBundle, k_max: int = 4) -> dict:
    """Exact moments of a dense :class:`HessianBundle`.

    Returns
    -------
    dict
        ``trI``, ``trS``, ``trH`` (arrays indexed ``k - 1``), ``frob_I``,
        ``frob_S``, ``frob_IS``, ``frob_IS_normalized`` and ``op_S``.
    """
    I, S, H = bundle.I, bundle.S, bundle.H
    fI, fS = np.linalg.norm(I), np.linalg.norm(S)
    fIS = np.linalg.norm(I @ S)
    denom = fI * fS
    ev = np.linalg.eigvalsh(S) if S.size else np.zeros(1)
    return {
        "trI": _powers_trace(I, k_max),
        "trS": _powers_trace(S, k_max),
        "trH": _powers_trace(H, k_max),
        "frob_I": float(fI),
        "frob_S": float(fS),
        "frob_IS": float(fIS),
        "frob_IS_normalized": float(fIS / denom) if denom > 0 else 0.0,
        "op_S": float(np.abs(ev).max()),
    }


def s_operator(params: NetParams, X, c, cache=None) -> LinearOperator:
    """``S = sum_r c_r Hf_r`` as a scipy ``LinearOperator``."""
    X = _as_batch(params, X)
    seeds = np.asarray(c, float).reshape(X.shape[0], params.arch.n_out)
    cache = cache or forward(params, X)
    P = params.arch.P

    def mv(v):
        return hvp(params, X, seeds, np.asarray(v, float).reshape(P, -1), cache=cache).reshape(np.shape(v))

    return LinearOperator((P, P), matvec=mv, matmat=mv, rmatvec=mv, dtype=float)


@dataclass
class MomentEngine:
    """Moments of ``H = I + S`` through Hessian-vector products.

    Parameters
    ----------
    params : NetParams
    X : array_like
        Training inputs ``(N, n_0)``.
    loss : LossSpec
    probes : int
        Rademacher probes for ``Tr(S^k)``, ``k = 2, 3, 4``.
    seed : int
        Probe seed.
    block : int
        Directions per HVP batch.
    """

    params: NetParams
    X: np.ndarray
    loss: LossSpec
    probes: int = 16
    seed: int = 0
    block: int = 64

    def __post_init__(self):
        self.X = _as_batch(self.params, getattr(self.X, "inputs", self.X))
        self.cache = forward(self.params, self.X)
        self.Y = self.cache[2].reshape(-1)
        self.grad = loss_grad(self.loss, self.Y)
        self.hc = loss_hess(self.loss, self.Y)
        self._seeds = self.grad.reshape(self.X.shape[0], self.params.arch.n_out)
        self._J = None

    @property
    def J(self):
        if self._J is None:
            self._J = jacobian(self.params, self.X, cache=self.cache)
        return self._J

    def S(self, V):
        """``S V`` for ``V`` of shape ``(P,)`` or ``(P, m)``."""
        V = np.asarray(V, float)
        if V.ndim == 1:
            return hvp(self.params, self.X, self._seeds, V, cache=self.cache)
        out = np.empty_like(V)
        for lo in range(0, V.shape[1], self.block):
            hi = min(V.shape[1], lo + self.block)
            out[:, lo:hi] = hvp(self.params, self.X, self._seeds, V[:, lo:hi], cache=self.cache)
        return out

    def trace_S(self) -> float:
        """Exact ``Tr(S) = G' grad C``."""
        return float(g_trace(self.params, self.X).reshape(-1) @ self.grad)

    def moments(self, k_max: int = 4, op_norm: bool = False, mixed: bool = True) -> dict:
        """Traces of ``I^k``, ``S^k``, ``H^k`` for ``k <= 4`` and norm statistics.

        Returns
        -------
        dict
            ``trI``, ``trS``, ``trH``, ``trS_se`` (probe standard error),
            ``mixed`` (``Tr(H^k) - Tr(I^k) - Tr(S^k)``, exact), ``frob_I``,
            ``frob_S``, ``frob_IS``, ``frob_IS_normalized``, ``loss`` and,
            with ``op_norm``, ``op_S``. With ``mixed=False`` the products
            with ``J'`` are skipped and ``mixed``, ``trH`` and ``frob_IS``
            are NaN.
        """
        if not 1 <= k_max <= 4:
            raise ConfigError("k_max must be in 1..4 in directional mode")
        J, C = self.J, self.hc
        K = J @ J.T
        CK = C @ K
        trI = _powers_trace(CK, k_max)
        trS = np.zeros(k_max)
        se = np.zeros(k_max)
        mix = np.zeros(k_max) if mixed else np.full(k_max, np.nan)
        trS[0] = self.trace_S()
        frob_IS2 = np.nan
        if k_max >= 2 and mixed:
            U = J.T
            B1 = self.S(U)
            A1 = U.T @ B1
            A1 = 0.5 * (A1 + A1.T)
            A2 = B1.T @ B1
            CKC = CK @ C
            mix[1] = 2 * np.trace(C @ A1)
            if k_max >= 3:
                mix[2] = 3 * np.trace(CKC @ A1) + 3 * np.trace(C @ A2)
            if k_max >= 4:
                A3 = B1.T @ self.S(B1)
                A3 = 0.5 * (A3 + A3.T)
                CA1 = C @ A1
                mix[3] = 4 * np.trace(CKC @ K @ C @ A1) + 4 * np.trace(CKC @ A2) + 2 * np.trace(CA1 @ CA1) + 4 * np.trace(C @ A3)
            frob_IS2 = float(np.trace(CKC @ A2))
        if k_max >= 2:
            rng = np.random.default_rng(self.seed)
            Z = rng.choice([-1.0, 1.0], size=(self.params.arch.P, self.probes))
            SZ = self.S(Z)
            est = {2: np.einsum("pj,pj->j", SZ, SZ)}
            if k_max >= 3:
                S2Z = self.S(SZ)
                est[3] = np.einsum("pj,pj->j", SZ, S2Z)
                est[4] = np.einsum("pj,pj->j", S2Z, S2Z)
            for k in range(2, k_max + 1):
                trS[k - 1] = est[k].mean()
                se[k - 1] = est[k].std(ddof=1) / np.sqrt(self.probes) if self.probes > 1 else np.nan
        trH = trI + trS + mix
        frob_I = np.sqrt(trI[1]) if k_max >= 2 else np.sqrt(np.trace(CK @ CK))
        frob_S = np.sqrt(max(trS[1], 0.0)) if k_max >= 2 else np.nan
        frob_IS = np.sqrt(max(frob_IS2, 0.0))
        out = {
            "trI": trI,
            "trS": trS,
            "trH": trH,
            "trS_se": se,
            "mixed": mix,
            "frob_I": float(frob_I),
            "frob_S": float(frob_S),
            "frob_IS": float(frob_IS),
            "frob_IS_normalized": float(frob_IS / (frob_I * frob_S)) if frob_I * frob_S > 0 else 0.0,
            "loss": loss_value(self.loss, self.Y),
        }
        if op_norm:
            out["op_S"] = self.op_norm()
        return out

    def op_norm(self, tol: float = 1e-6) -> float:
        """``|S|_op`` by Lanczos (largest-magnitude eigenvalue)."""
        op = s_operator(self.params, self.X, self.grad, cache=self.cache)
        v0 = np.random.default_rng(self.seed + 1).standard_normal(self.params.arch.P)
        w = eigsh(op, k=1, which="LM", tol=tol, v0=v0, return_eigenvectors=False)
        return float(np.abs(w).max())


def tensor_decay_probe(params: NetParams, X, omega=(), gamma=()) -> dict:
    """Contractions of output derivatives that vanish with width.

    ``Omega(i0, i1, i2) = grad f_i0' Hf_i1 grad f_i2`` and
    ``Gamma(i0, i1, i2, i3) = grad f_i0' Hf_i1 Hf_i2 grad f_i3``, with
    indices into the flat output vector.

    Returns
    -------
    dict
        ``omega`` and ``gamma`` arrays in the order of the given tuples.
    """
    X = _as_batch(params, X)
    cache = forward(params, X)
    J = jacobian(params, X, cache=cache)
    nL = params.arch.n_out
    M = J.shape[0]

    def seed(r):
        s = np.zeros((X.shape[0], nL))
        s[r // nL, r % nL] = 1.0
        return s

    hj = {}

    def h_grads(r):
        # columns Hf_r grad f_j for all j
        if r not in hj:
            hj[r] = hvp(params, X, seed(r), J.T, cache=cache)
        return hj[r]

    for t in list(omega) + list(gamma):
        if max(t) >= M or min(t) < 0:
            raise ConfigError(f"index out of range in tuple {t}")
    om = np.array([J[i0] @ h_grads(i1)[:, i2] for i0, i1, i2 in omega], dtype=float)
    ga = []
    for i0, i1, i2, i3 in gamma:
        u = h_grads(i2)[:, i3]
        v = hvp(params, X, seed(i1), u, cache=cache)
        ga.append(J[i0] @ v)
    return {"omega": om, "gamma": np.array(ga, dtype=float)}


def rayleigh_profile(bundle: HessianBundle, m: int) -> dict:
    """Rayleigh quotients on the top-``m`` eigenvectors of ``I`` and of ``S``.

    Returns
    -------
    dict
        ``"I"`` and ``"S"``: arrays ``(m, 3)`` with columns
        ``(eigenvalue, v'Iv, v'Sv)`` sorted by decreasing eigenvalue.
    """
    P = bundle.I.shape[0]
    if not 1 <= m <= P:
        raise ConfigError(f"m must be in 1..{P}")
    out = {}
    for name, A in (("I", bundle.I), ("S", bundle.S)):
        w, V = np.linalg.eigh(A)
        w, V = w[::-1][:m], V[:, ::-1][:, :m]
        out[name] = np.stack([w, np.einsum("pi,pq,qi->i", V, bundle.I, V), np.einsum("pi,pq,qi->i", V, bundle.S, V)], axis=1)
    return out


def loss_surface_slice(params: NetParams, X, loss: LossSpec, v1, v2, grid: int = 21, extent: float = 1.0):
    """Loss on the plane ``theta + a v1 + b v2`` for ``a, b`` in ``[-extent, extent]``.

    Returns
    -------
    a, b : ndarray
        Grid coordinates (length ``grid``).
    values : ndarray
        ``(grid, grid)`` with ``values[i, j]`` at ``(a[i], b[j])``.
    """
    v1, v2 = np.asarray(v1, float), np.asarray(v2, float)
    if abs(np.linalg.norm(v1) - 1) > 1e-8 or abs(np.linalg.norm(v2) - 1) > 1e-8 or abs(v1 @ v2) > 1e-8:
        raise ConfigError("v1 and v2 must be orthonormal")
    X = _as_batch(params, getattr(X, "inputs", X))
    a = np.linspace(-extent, extent, int(grid))
    vals = np.empty((a.size, a.size))
    for i, ai in enumerate(a):
        for j, bj in enumerate(a):
            p = NetParams(params.theta + ai * v1 + bj * v2, params.arch)
            vals[i, j] = loss_value(loss, forward(p, X)[2])
    return a, a.copy(), vals


def empirical_upsilon(params: NetParams, X, probes: int = 8, seed: int = 0) -> np.ndarray:
    """Hutchinson estimate of ``<Hf(x_i), Hf(x_j)>_F`` over flat outputs."""
    X = _as_batch(params, X)
    nL = params.arch.n_out
    Xr = np.repeat(X, nL, axis=0)
    seeds = np.tile(np.eye(nL), (X.shape[0], 1))
    Z = np.random.default_rng(seed).choice([-1.0, 1.0], size=(params.arch.P, probes))
    Hz = hvp(params, Xr, seeds, Z, reduce=False)
    return np.einsum("ipm,jpm->ij", Hz, Hz) / probes
