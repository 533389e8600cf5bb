"""Infinite-width kernels of a fully connected network on a finite dataset.

Layer ``l`` tables are indexed from 1. Writing ``E_l`` for the expectation over
``(a, a') ~ N(0, Sigma^(l))`` evaluated at a pair of inputs ``(x, x')``:

    Sigma^(1)      = x.x' / n0 + beta^2
    Sigma^(l+1)    = E_l[s(a) s(a')] + beta^2
    Sigmadot^(l+1) = E_l[s'(a) s'(a')],   Sigmaddot^(l+1) = E_l[s''(a) s''(a')]
    Theta^(1)      = Sigma^(1)
    Theta^(l+1)    = Theta^(l) Sigmadot^(l+1) + Sigma^(l+1)

The second-order kernels start from zero at ``l = 1`` and follow, with
``u(x) = Phi(x, x) + Theta(x, x)`` and all right-hand kernels at layer ``l``,

    Ups^(l+1)(x,x') = Ups Sdot + Theta^2 Sddot + 2 Theta Sdot
    Phi^(l+1)(x,x') = Phi(x,x') Sdot + u(x) E_l[s''(a) s(a')]
    Xi^(l+1)(x,x')  = Xi Sdot + (Phi(x,x') Phi(x',x) + u(x) u(x')) Sddot
                      + Phi(x,x') u(x') E_l[s'(a) s'''(a')]
                      + Phi(x',x) u(x) E_l[s'''(a) s'(a')]
    Lam^(l+1)(x,x') = Lam Sdot + Theta(x,x') (Phi(x,x') Sddot + u(x) E_l[s'''(a) s'(a')])
                      + Phi^(l+1)(x,x')

Here ``Phi(x, x') = lim E[g(x) f(x')]`` with ``g`` the parameter-space Laplacian
of the output, ``Xi`` is the covariance of ``g`` and ``Lam(x, x')`` the kernel
that drives ``g`` during training. ``Phi`` and ``Lam`` are not symmetric.
"""

from dataclasses import dataclass, field

import numpy as np

from .activations import NonlinPack
from .errors import ConfigError
from .gaussmoments import QuadRule, bi_expect_table, hermite_rule

__all__ = [
    "KernelStack",
    "GramMatrix",
    "forward_kernels",
    "upsilon_kernel",
    "source_kernels",
    "lambda_kernel",
    "compute_kernels",
    "gram",
]

LAMBDA_LAST_TERMS = ("sigma", "sigma_dot")


@dataclass
class KernelStack:
    """Per-layer kernel tables on a fixed dataset.

    Dictionaries are keyed by layer index. ``sigma`` and ``theta`` cover
    ``1..L``; the derivative tables cover ``2..L``. ``ddot_sig[l][i, j]`` is
    ``E[s''(a_i) s(a_j)]``, ``tdot_dot[l][i, j]`` is ``E[s'''(a_i) s'(a_j)]`` and
    ``ddot_dot[l][i, j]`` is ``E[s''(a_i) s'(a_j)]``, all under ``Sigma^(l-1)``.
    """

    L: int
    beta: float
    nl: NonlinPack
    sigma: dict = field(default_factory=dict)
    theta: dict = field(default_factory=dict)
    sigma_dot: dict = field(default_factory=dict)
    sigma_ddot: dict = field(default_factory=dict)
    ddot_sig: dict = field(default_factory=dict)
    tdot_dot: dict = field(default_factory=dict)
    ddot_dot: dict = field(default_factory=dict)
    upsilon: np.ndarray | None = None
    xi: np.ndarray | None = None
    phi: np.ndarray | None = None
    lam: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.sigma[1].shape[0]

    @property
    def ntk(self) -> np.ndarray:
        """Output-layer NTK table ``Theta^(L)``."""
        return self.theta[self.L]

    @property
    def nngp(self) -> np.ndarray:
        """Output-layer covariance table ``Sigma^(L)``."""
        return self.sigma[self.L]

    def tables(self) -> dict:
        """Named output-layer tables (those already computed)."""
        out = {"sigma": self.sigma[self.L], "theta": self.theta[self.L]}
        for name in ("upsilon", "xi", "phi", "lam"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        return out


@dataclass(frozen=True)
class GramMatrix:
    """``K(x_i, x_j) delta_km`` expanded over ``n_L`` outputs.

    Row ``i * n_L + k`` corresponds to input ``i`` and output ``k``, matching a
    row-major flattening of an ``(N, n_L)`` output array.
    """

    entries: np.ndarray
    symmetric: bool
    n_L: int

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    @property
    def shape(self):
        return self.entries.shape


def gram(table, n_L: int = 1, symmetric: bool | None = None) -> GramMatrix:
    """Expand an ``N x N`` kernel table into an ``N n_L x N n_L`` Gram matrix."""
    if int(n_L) < 1:
        raise ConfigError(f"output multiplicity must be >= 1, got {n_L}")
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[0] != table.shape[1]:
        raise ConfigError(f"kernel table must be square, got shape {table.shape}")
    if symmetric is None:
        symmetric = bool(np.array_equal(table, table.T))
    entries = table.copy() if n_L == 1 else np.kron(table, np.eye(int(n_L)))
    return GramMatrix(entries, symmetric, int(n_L))


def _inputs(data):
    X = getattr(data, "inputs", data)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ConfigError("dataset must be a nonempty (N, n0) array")
    return X


def _layer_expectations(K, nl, rule, mixed):
    # ordered-pair tables of E[s^(i)(a_x) s^(j)(a_x')] for one layer
    N = K.shape[0]
    d = np.diag(K)
    il, jl = np.tril_indices(N)
    sym = [(0, 0), (1, 1)]
    ordered = []
    if mixed:
        sym.append((2, 2))
        ordered = [(2, 0), (3, 1), (2, 1)]
    pairs = sym + [q for o in ordered for q in (o, o[::-1])]
    vals = bi_expect_table(nl, pairs, d[il], K[il, jl], d[jl], rule)
    out = {}
    for q, key in enumerate(sym):
        T = np.empty((N, N))
        T[il, jl] = vals[q]
        T[jl, il] = vals[q]
        out[key] = T
    for r, key in enumerate(ordered):
        T = np.empty((N, N))
        T[il, jl] = vals[len(sym) + 2 * r]
        T[jl, il] = vals[len(sym) + 2 * r + 1]
        out[key] = T
    return out


def forward_kernels(data, L: int, beta: float, nl: NonlinPack, rule: QuadRule | None = None, mixed: bool = True) -> KernelStack:
    """Compute ``Sigma``, ``Sigmadot``, ``Sigmaddot`` and ``Theta`` for layers ``1..L``.

    Parameters
    ----------
    data : Dataset or array_like
        Inputs of shape ``(N, n0)``.
    L : int
        Depth (number of affine layers).
    beta : float
        Bias scale.
    nl : NonlinPack
    rule : QuadRule, optional
    mixed : bool
        Also tabulate the mixed-derivative expectations needed by the
        second-order kernels.

    Returns
    -------
    KernelStack
        Second-order tables are left unset.
    """
    if int(L) < 1:
        raise ConfigError(f"depth must be >= 1, got {L}")
    L = int(L)
    rule = rule or hermite_rule()
    X = _inputs(data)
    st = KernelStack(L=L, beta=float(beta), nl=nl)
    b2 = float(beta) ** 2
    S = X @ X.T / X.shape[1] + b2
    S = 0.5 * (S + S.T)
    st.sigma[1] = S
    st.theta[1] = S.copy()
    for l in range(1, L):
        E = _layer_expectations(st.sigma[l], nl, rule, mixed)
        st.sigma[l + 1] = E[(0, 0)] + b2
        st.sigma_dot[l + 1] = E[(1, 1)]
        if mixed:
            st.sigma_ddot[l + 1] = E[(2, 2)]
            st.ddot_sig[l + 1] = E[(2, 0)]
            st.tdot_dot[l + 1] = E[(3, 1)]
            st.ddot_dot[l + 1] = E[(2, 1)]
        st.theta[l + 1] = st.theta[l] * st.sigma_dot[l + 1] + st.sigma[l + 1]
    return st


def _require_mixed(stack):
    if stack.L > 1 and 2 not in stack.sigma_ddot:
        raise ConfigError("kernel stack lacks mixed tables; call forward_kernels(..., mixed=True)")


def upsilon_kernel(stack: KernelStack) -> np.ndarray:
    """Limit of ``sum_{p,q} d2f(x)/dp dq * d2f(x')/dp dq`` (symmetric)."""
    _require_mixed(stack)
    U = np.zeros_like(stack.sigma[1])
    for l in range(1, stack.L):
        Th, Sd = stack.theta[l], stack.sigma_dot[l + 1]
        U = U * Sd + Th * Th * stack.sigma_ddot[l + 1] + 2.0 * Th * Sd
    return U


def _source_layers(stack):
    # yields (l, Phi^(l), Xi^(l)) for l = 1..L
    N = stack.N
    Phi = np.zeros((N, N))
    Xi = np.zeros((N, N))
    yield 1, Phi, Xi
    for l in range(1, stack.L):
        Sd, Sdd = stack.sigma_dot[l + 1], stack.sigma_ddot[l + 1]
        B = stack.tdot_dot[l + 1]
        u = np.diag(Phi) + np.diag(stack.theta[l])
        Xi = (
            Xi * Sd
            + (Phi * Phi.T + np.outer(u, u)) * Sdd
            + Phi * u[None, :] * B.T
            + Phi.T * u[:, None] * B
        )
        Phi = Phi * Sd + u[:, None] * stack.ddot_sig[l + 1]
        yield l + 1, Phi, Xi


def source_kernels(stack: KernelStack):
    """Covariance ``Xi`` of ``g`` and cross-covariance ``Phi(x, x') = E[g(x) f(x')]``.

    Returns
    -------
    xi : ndarray
        Symmetric ``N x N`` table.
    phi : ndarray
        Non-symmetric ``N x N`` table.
    """
    _require_mixed(stack)
    for _, Phi, Xi in _source_layers(stack):
        pass
    return 0.5 * (Xi + Xi.T), Phi


def lambda_kernel(stack: KernelStack, last_term: str = "sigma") -> np.ndarray:
    """Kernel ``Lam`` with ``d g(x)/dt = -sum_x' Lam(x, x') dC/df(x')`` under gradient flow.

    Parameters
    ----------
    stack : KernelStack
    last_term : {"sigma", "sigma_dot"}
        ``"sigma"`` closes the recursion with ``Phi^(l+1)``, which uses
        ``E[s''(a) s(a')]``; ``"sigma_dot"`` substitutes ``E[s''(a) s'(a')]``
        in that term instead (kept for comparison, it disagrees with
        finite-width networks).
    """
    if last_term not in LAMBDA_LAST_TERMS:
        raise ConfigError(f"last_term must be one of {LAMBDA_LAST_TERMS}, got {last_term!r}")
    _require_mixed(stack)
    N = stack.N
    Lam = np.zeros((N, N))
    prev = None
    for l, Phi, _ in _source_layers(stack):
        if prev is not None:
            Phi_l = prev
            Th = stack.theta[l - 1]
            Sd, Sdd = stack.sigma_dot[l], stack.sigma_ddot[l]
            u = np.diag(Phi_l) + np.diag(Th)
            if last_term == "sigma":
                tail = Phi
            else:
                tail = Phi_l * Sd + u[:, None] * stack.ddot_dot[l]
            Lam = Lam * Sd + Th * (Phi_l * Sdd + u[:, None] * stack.tdot_dot[l]) + tail
        prev = Phi
    return Lam


def compute_kernels(data, L: int, beta: float, nl: NonlinPack, rule: QuadRule | None = None, lambda_last_term: str = "sigma") -> KernelStack:
    """Forward kernels plus ``Ups``, ``Xi``, ``Phi`` and ``Lam`` in one call."""
    st = forward_kernels(data, L, beta, nl, rule, mixed=True)
    st.upsilon = upsilon_kernel(st)
    st.xi, st.phi = source_kernels(st)
    st.lam = lambda_kernel(st, lambda_last_term)
    return st
