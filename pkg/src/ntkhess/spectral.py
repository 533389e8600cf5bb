"""Symmetric eigendecomposition and spectral matrix functions."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "EigDecomp",
    "sym_eig",
    "spectral_fn",
    "expm_scaled",
    "flow_integral",
    "reg_inverse",
    "kernel_pca",
]

SYM_TOL = 1e-10


@dataclass(frozen=True)
class EigDecomp:
    """Eigenvalues sorted in descending order with orthonormal eigenvectors as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def _as_matrix(A):
    return np.asarray(getattr(A, "entries", A), dtype=float)


def sym_eig(A) -> EigDecomp:
    """Eigendecomposition of a symmetric matrix.

    Raises
    ------
    DomainError
        If ``A`` is asymmetric beyond ``1e-10`` relative to its largest entry.
    """
    A = _as_matrix(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    if np.abs(A - A.T).max(initial=0.0) > SYM_TOL * scale:
        raise DomainError("matrix is not symmetric")
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    return EigDecomp(w[::-1].copy(), V[:, ::-1].copy())


def spectral_fn(A, fn) -> np.ndarray:
    """``V fn(lambda) V^T`` for symmetric ``A`` (``fn`` acts on the eigenvalue array)."""
    e = A if isinstance(A, EigDecomp) else sym_eig(A)
    V = e.eigenvectors
    return (V * fn(e.eigenvalues)) @ V.T


def expm_scaled(A, t: float) -> np.ndarray:
    """``exp(-t A)`` for symmetric PSD ``A`` and ``t >= 0``."""
    if t < 0:
        raise ConfigError(f"t must be nonnegative, got {t}")
    return spectral_fn(A, lambda w: np.exp(-t * w))


def flow_integral(A, t: float) -> np.ndarray:
    """``int_0^t exp(-s A) ds = A^{-1} (I - exp(-t A))`` with the ``lambda -> 0`` limit ``t``.

    Unlike a pseudo-inverse this is well defined and continuous on the whole
    PSD cone, which matters for nearly singular NTK Gram matrices.
    """
    if t < 0:
        raise ConfigError(f"t must be nonnegative, got {t}")

    def fn(w):
        x = t * w
        small = np.abs(x) < 1e-8
        safe = np.where(small, 1.0, w)
        return np.where(small, t * (1.0 - 0.5 * x), -np.expm1(-x) / safe)

    return spectral_fn(A, fn)


def reg_inverse(A, rel_cutoff: float = 1e-10) -> np.ndarray:
    """Pseudo-inverse of a symmetric PSD matrix with relative eigenvalue cutoff."""
    e = sym_eig(A)
    lam_max = max(float(e.eigenvalues[0]), 0.0) if e.eigenvalues.size else 0.0
    keep = e.eigenvalues > rel_cutoff * lam_max

    def fn(w):
        return np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)

    return spectral_fn(e, fn)


def kernel_pca(gram, weights=None) -> EigDecomp:
    """Spectrum of ``W^{1/2} K W^{1/2}`` for a Gram matrix ``K`` and diagonal weights ``W``.

    With the loss Hessian ``H_C`` as weights this is the limiting nonzero
    spectrum of the Gauss-Newton part ``I`` of the loss Hessian.
    """
    K = _as_matrix(gram)
    if weights is None:
        return sym_eig(K)
    w = np.asarray(weights, dtype=float)
    if w.ndim == 2:
        w = np.diag(w)
    if w.shape != (K.shape[0],):
        raise ConfigError(f"weights must have length {K.shape[0]}")
    if np.any(w < 0):
        raise ConfigError("weights must be nonnegative")
    r = np.sqrt(w)
    return sym_eig(r[:, None] * K * r[None, :])
