"""Finite-width networks: forward pass, Jacobians, Hessian-vector products and probes."""

from .hessian import HessianBundle, assemble, g_trace, hessian, hessian_vector, hvp, numerical_rank, s_matrix
from .io import load_snapshot, save_snapshot
from .net import Arch, NetParams, empirical_ntk, forward, init_params, jacobian, meanfield_rescale, outputs, rectangular, vjp
from .probes import MomentEngine, empirical_moments, empirical_upsilon, loss_surface_slice, rayleigh_profile, s_operator, tensor_decay_probe
from .train import Trajectory, default_step, train_flow

__all__ = [
    "HessianBundle",
    "assemble",
    "g_trace",
    "hessian",
    "hessian_vector",
    "hvp",
    "numerical_rank",
    "s_matrix",
    "load_snapshot",
    "save_snapshot",
    "Arch",
    "NetParams",
    "empirical_ntk",
    "forward",
    "init_params",
    "jacobian",
    "meanfield_rescale",
    "outputs",
    "rectangular",
    "vjp",
    "MomentEngine",
    "empirical_moments",
    "empirical_upsilon",
    "loss_surface_slice",
    "rayleigh_profile",
    "s_operator",
    "tensor_decay_probe",
    "Trajectory",
    "default_step",
    "train_flow",
]
