"""Conditional optimal transport and triangular flow matching."""
from .cond_wasserstein import GaussianJoint, empirical_cw, gaussian_cw2_squared
from .flow_model import TrainConfig, train
from .ode_sampler import IntegratorConfig, integrate, sample_posterior
from .ot_core import CostSpec, CouplingPlan, DiscreteMeasure, TransportError, cot_coupling

__version__ = "0.1.0"

__all__ = [
    "CostSpec",
    "CouplingPlan",
    "DiscreteMeasure",
    "GaussianJoint",
    "IntegratorConfig",
    "TrainConfig",
    "TransportError",
    "cot_coupling",
    "empirical_cw",
    "gaussian_cw2_squared",
    "integrate",
    "sample_posterior",
    "train",
]
