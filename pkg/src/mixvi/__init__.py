"""Gradient-free Gaussian-mixture variational inference.

Approximates un-normalized target densities with Gaussian mixtures by
discretizing an affine-invariant natural-gradient flow with an adaptive,
positivity-preserving exponential integrator.  Only pointwise potential
evaluations are ever required.
"""

from .integrator import (AnnealConfig, IntegratorConfig, MomentEstimates, StepDiagnostics,
                         Trajectory, run)
from .mixture import MixtureState, draw_batch, log_density, mixture_moments, standard_init
from .targets import (GaussianPotential, TargetPotential, case_a_target, case_b_target,
                      case_c_target, funnel_target, gaussian_target, make_target, temper)

__all__ = [
    "AnnealConfig",
    "GaussianPotential",
    "IntegratorConfig",
    "MixtureState",
    "MomentEstimates",
    "StepDiagnostics",
    "TargetPotential",
    "Trajectory",
    "case_a_target",
    "case_b_target",
    "case_c_target",
    "draw_batch",
    "funnel_target",
    "gaussian_target",
    "log_density",
    "make_target",
    "mixture_moments",
    "run",
    "standard_init",
    "temper",
]

__version__ = "0.1.0"
