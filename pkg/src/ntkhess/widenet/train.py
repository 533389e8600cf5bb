"""Explicit-Euler gradient flow on the parameters of a finite network."""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import eigsh

from ..errors import ConfigError, NumericalError
from ..losses import LossSpec, loss_grad, loss_value
from .net import NetParams, _as_batch, forward, jacobian, vjp

__all__ = ["Trajectory", "default_step", "train_flow"]


@dataclass
class Trajectory:
    """Recorded states of a training run.

    ``params[i]`` is ``None`` when parameters were not kept.
    """

    times: list = field(default_factory=list)
    Y: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    params: list = field(default_factory=list)
    dt: float = 0.0

    def __len__(self):
        return len(self.times)


def default_step(params: NetParams, X) -> float:
    """``1 / (2 lambda_max(DY DY'))`` for the empirical NTK Gram at ``params``."""
    J = jacobian(params, _as_batch(params, X))
    K = J @ J.T
    lam = eigsh(K, k=1, which="LA", return_eigenvectors=False)[0] if K.shape[0] > 64 else np.linalg.eigvalsh(K)[-1]
    return 0.5 / float(lam)


def train_flow(params: NetParams, X, loss: LossSpec, t_max: float, dt: float | None = None, record_every: int = 1, keep_params: bool = True, record_times=None) -> Trajectory:
    """Euler steps ``theta <- theta - dt DY' grad C(Y)`` up to time ``t_max``.

    Parameters
    ----------
    params : NetParams
        Starting point; not modified.
    X : array_like
        Training inputs.
    loss : LossSpec
    t_max : float
    dt : float, optional
        Step size; defaults to :func:`default_step`.
    record_every : int
        Record every this many steps (the start and the end are always kept).
    keep_params : bool
        Store a parameter copy with each record.
    record_times : sequence of float, optional
        Record at the steps nearest to these times instead.

    Notes
    -----
    The step is shrunk to ``t_max / ceil(t_max / dt)`` so the run ends
    exactly at ``t_max``.

    Raises
    ------
    NumericalError
        If the loss becomes non-finite (the message gives the step).
    """
    X = _as_batch(params, getattr(X, "inputs", X))
    if t_max < 0 or int(record_every) < 1:
        raise ConfigError("t_max must be >= 0 and record_every >= 1")
    if dt is None:
        dt = default_step(params, X)
    if dt <= 0:
        raise ConfigError("dt must be positive")
    # uniform grid no coarser than dt that ends exactly at t_max
    n_total = max(1, int(np.ceil(t_max / dt - 1e-9))) if t_max > 0 else 0
    dt = t_max / n_total if n_total else float(dt)
    if record_times is not None:
        marks = np.asarray(record_times, dtype=float)
        if marks.size and (marks.min() < 0 or marks.max() > t_max * (1 + 1e-12)):
            raise ConfigError("record_times must lie in [0, t_max]")
        keep = set(np.rint(marks / dt).astype(int).tolist()) if n_total else {0}
    else:
        keep = {n for n in range(n_total + 1) if n % int(record_every) == 0} | {n_total}

    p = params.copy()
    traj = Trajectory(dt=float(dt))
    c_prev = np.inf
    warned = False
    for n in range(n_total + 1):
        cache = forward(p, X)
        Y = cache[2].reshape(-1)
        c = loss_value(loss, Y)
        if not np.isfinite(c):
            raise NumericalError(f"non-finite loss at step {n} (t = {n * dt:.6g})")
        if c > c_prev * (1 + 1e-10) and not warned:
            warnings.warn(f"loss increased at step {n}; dt = {dt:.3g} may exceed 2 / lambda_max(H)", RuntimeWarning, stacklevel=2)
            warned = True
        c_prev = c
        if n in keep:
            traj.times.append(n * dt)
            traj.Y.append(Y.copy())
            traj.loss.append(c)
            traj.params.append(p.copy() if keep_params else None)
        if n == n_total:
            break
        g = loss_grad(loss, Y).reshape(X.shape[0], p.arch.n_out)
        p.theta -= dt * vjp(p, X, g, cache=cache)
    return traj
