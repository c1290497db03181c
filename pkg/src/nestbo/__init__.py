"""Derivative-aware local Bayesian optimization with Newton-step targeting."""

from .acquisition import AcqConfig, gi_value, mc_nest_value, nest_value, select_batch
from .gp import (
    DerivBelief,
    GpState,
    NumericalError,
    SingularHessianError,
    condition,
    fit_hyperparams,
    grad_belief,
    scale_factor,
)
from .kernel import KernelParams
from .newton import LoopConfig, armijo_linesearch, nest_bo_iterate, newton_direction

__version__ = "0.1.0"

__all__ = [
    "AcqConfig",
    "DerivBelief",
    "GpState",
    "KernelParams",
    "LoopConfig",
    "NumericalError",
    "SingularHessianError",
    "armijo_linesearch",
    "condition",
    "fit_hyperparams",
    "gi_value",
    "grad_belief",
    "mc_nest_value",
    "nest_bo_iterate",
    "nest_value",
    "newton_direction",
    "scale_factor",
    "select_batch",
]
