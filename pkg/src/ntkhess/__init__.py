"""Spectrum of the loss Hessian of wide networks.

Infinite-width kernels (:mod:`ntkhess.kernels`) and their training dynamics
(:mod:`ntkhess.theory`) predict the moments of ``H = I + S``; finite networks
(:mod:`ntkhess.widenet`) measure them.
"""

from .activations import NONLINEARITIES, NonlinPack, make_nonlin
from .data import DataConfig, Dataset, generate
from .errors import ConfigError, DomainError, IngestionError, NumericalError
from .gaussmoments import hermite_rule
from .kernels import KernelStack, compute_kernels, gram
from .losses import LossSpec, make_loss

__all__ = [
    "NONLINEARITIES",
    "NonlinPack",
    "make_nonlin",
    "DataConfig",
    "Dataset",
    "generate",
    "ConfigError",
    "DomainError",
    "IngestionError",
    "NumericalError",
    "hermite_rule",
    "KernelStack",
    "compute_kernels",
    "gram",
    "LossSpec",
    "make_loss",
]

__version__ = "0.1.0"
