"""Smooth scalar nonlinearities with analytic derivatives up to order four.

Every pack exposes ``eval_k(k, x)`` for ``k`` in ``0..4``. The derivatives are
written out by hand so that kernel recursions and the finite network share
bit-identical values.
"""

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf as _erf
from scipy.special import expit

from .errors import ConfigError

__all__ = ["NonlinPack", "make_nonlin", "NONLINEARITIES"]

NONLINEARITIES = (
    "softplus",
    "normalized_softplus",
    "arctan",
    "erf",
    "tanh",
    "identity",
)


@dataclass(frozen=True)
class NonlinPack:
    """A nonlinearity and its first four derivatives.

    The evaluated function is ``scale * (base(x) - shift)``; ``shift`` only
    enters the zeroth derivative.

    Attributes
    ----------
    id : str
        Registry name.
    scale : float
        Post-composition factor (1 for the plain variants).
    shift : float
        Constant subtracted from the base function before scaling.
    """

    id: str
    derivs: Sequence[Callable[[np.ndarray], np.ndarray]] = field(compare=False, hash=False)
    scale: float = 1.0
    shift: float = 0.0

    def eval_k(self, k: int, x):
        """Evaluate the ``k``-th derivative at ``x`` (scalar or array)."""
        if k not in (0, 1, 2, 3, 4):
            raise ValueError(f"derivative order must be in 0..4, got {k}")
        x = np.asarray(x, dtype=float)
        out = self.derivs[k](x)
        if k == 0 and self.shift != 0.0:
            out = out - self.shift
        if self.scale != 1.0:
            out = self.scale * out
        return out if out.ndim else float(out)

    def __call__(self, x):
        return self.eval_k(0, x)

    def __repr__(self):
        return f"NonlinPack({self.id!r}, scale={self.scale:.6g}, shift={self.shift:.6g})"


def _softplus_derivs():
    def d0(x):
        return np.logaddexp(0.0, x)

    def d1(x):
        return expit(x)

    def d2(x):
        s = expit(x)
        return s * (1.0 - s)

    def d3(x):
        s = expit(x)
        return s * (1.0 - s) * (1.0 - 2.0 * s)

    def d4(x):
        s = expit(x)
        return s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s)

    return (d0, d1, d2, d3, d4)


def _arctan_derivs():
    def d1(x):
        return 1.0 / (1.0 + x * x)

    def d2(x):
        return -2.0 * x / (1.0 + x * x) ** 2

    def d3(x):
        return (6.0 * x * x - 2.0) / (1.0 + x * x) ** 3

    def d4(x):
        return 24.0 * x * (1.0 - x * x) / (1.0 + x * x) ** 4

    return (np.arctan, d1, d2, d3, d4)


_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)


def _erf_derivs():
    def d1(x):
        return _TWO_OVER_SQRT_PI * np.exp(-x * x)

    def d2(x):
        return -2.0 * x * d1(x)

    def d3(x):
        return (4.0 * x * x - 2.0) * d1(x)

    def d4(x):
        return (12.0 * x - 8.0 * x**3) * d1(x)

    return (_erf, d1, d2, d3, d4)


def _tanh_derivs():
    def d1(x):
        t = np.tanh(x)
        return 1.0 - t * t

    def d2(x):
        t = np.tanh(x)
        return -2.0 * t * (1.0 - t * t)

    def d3(x):
        t = np.tanh(x)
        return (1.0 - t * t) * (6.0 * t * t - 2.0)

    def d4(x):
        t = np.tanh(x)
        return (1.0 - t * t) * (16.0 * t - 24.0 * t**3)

    return (np.tanh, d1, d2, d3, d4)


def _identity_derivs():
    def d0(x):
        return x * 1.0

    def one(x):
        return np.ones_like(x)

    def zero(x):
        return np.zeros_like(x)

    return (d0, one, zero, zero, zero)


def _gauss_moments_1d(f, order=200):
    # E[f(X)] and E[f(X)^2] for X ~ N(0, 1)
    z, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / w.sum()
    v = f(z)
    return float(w @ v), float(w @ (v * v))


def make_nonlin(name: str) -> NonlinPack:
    """Build a nonlinearity pack by name.

    Parameters
    ----------
    name : str
        One of ``softplus``, ``normalized_softplus``, ``arctan``, ``erf``,
        ``tanh`` or ``identity``.

    Returns
    -------
    NonlinPack

    Notes
    -----
    ``softplus`` is ``log(1 + e^x)``, used as the smooth ReLU.
    ``normalized_softplus`` standardizes it under a standard normal input,
    ``(softplus(x) - m) / s`` with ``m = E[softplus(X)]`` and
    ``s = std(softplus(X))``, so that ``E[sigma(X)] = 0`` and
    ``E[sigma(X)^2] = 1``.
    """
    if name == "softplus":
        return NonlinPack("softplus", _softplus_derivs())
    if name == "normalized_softplus":
        d = _softplus_derivs()
        m1, m2 = _gauss_moments_1d(d[0])
        return NonlinPack("normalized_softplus", d, scale=1.0 / np.sqrt(m2 - m1 * m1), shift=m1)
    if name == "arctan":
        return NonlinPack("arctan", _arctan_derivs())
    if name == "erf":
        return NonlinPack("erf", _erf_derivs())
    if name == "tanh":
        return NonlinPack("tanh", _tanh_derivs())
    if name == "identity":
        return NonlinPack("identity", _identity_derivs())
    raise ConfigError(f"unknown nonlinearity {name!r}; expected one of {', '.join(NONLINEARITIES)}")
