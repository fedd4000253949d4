"""Numerical study of fully nonlinear elliptic equations with a singular
absorption term ``F(D^2 u) = gamma u^(gamma-1)`` through the regularized
problems ``F(D^2 u) = beta_eps(u)``."""

from .barrier import BarrierSpec, build_barrier, certify_supersolution, rescale_barrier, tune_amplitude
from .geometry import (EstimateReport, FreeBoundarySet, GeometryError, density_ratio, distance_field,
                       extract_free_boundary, gradient_bound_check, growth_exponent_fit, hausdorff_distance,
                       l1_harnack_check, neighborhood_volume, spherical_mean_check, surface_measure_boxcount,
                       tangential_harnack_ratio)
from .harness import ExperimentConfig, RunManifest, run_estimators, run_experiment
from .model import (EllipticOperator, Mollifier, ModelError, SingularityParams, alpha, beta_eps, beta_sup,
                    concavity_certificate_check, eval_operator, recession)
from .radial import RadialProfile, exact_power_profile, radial_shoot
from .solver import (Grid, ProblemSpec, ScalarField, SolveResult, continuation_sweep, read_field,
                     resolution_floor, solve_minimal, write_field)

__all__ = [name for name in dir() if not name.startswith("_")]
