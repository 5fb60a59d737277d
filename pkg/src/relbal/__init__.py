"""Balanced metrics relative to a torus on toric polarized models."""
from .balance_solver import (SolveConfig, SolveTrace, fit_constraint_t, gradient_descent_D,
                             t_iterate)
from .estimator import RelativeBalancedMetric
from .exceptions import RelbalError
from .fubini_study import bergman, fs_volume, h_s_density, kernel_field, l2_gram
from .geometry import build_model, make_grid, model_from_config, reference_gram
from .hermitian_space import (IndexVector, InnerProduct, distance, geodesic, orbit_project,
                              splitting_from_weights)
from .kempf_ness import (balanced_residual, convexity_scan, d_prime, delta_D, moment_map,
                         properness_probe, recover_index)
from .splitting import nearest_kronecker, product_distance_check, tensor, verify_splitting

__version__ = "0.1.0"

__all__ = [
    "IndexVector", "InnerProduct", "RelativeBalancedMetric", "RelbalError", "SolveConfig",
    "SolveTrace", "balanced_residual", "bergman", "build_model", "convexity_scan", "d_prime",
    "delta_D", "distance", "fit_constraint_t", "fs_volume", "geodesic", "gradient_descent_D",
    "h_s_density", "kernel_field", "l2_gram", "make_grid", "model_from_config", "moment_map",
    "nearest_kronecker", "orbit_project", "product_distance_check", "properness_probe",
    "recover_index", "reference_gram", "splitting_from_weights", "t_iterate", "tensor",
    "verify_splitting",
]
