"""Numerical toolkit for maximal solutions of the eikonal equation on
order-zero metrics, computed as minimal path energies."""
__version__ = "0.1.0"

from .errors import (ConditionViolationError, ConfigError, ConstructionError, DomainError,
                     EikopathError, IntegrationError, MetricEvaluationError,
                     NonConvergenceError, PreconditionError)
from .metric import (LogRadialLattice, MetricField, constant_metric, convexity_margin,
                     ellipticity_estimate, euclidean, from_callable, orthogonal_decomposition_defect,
                     perturbation_distance, perturbed, radial_block_metric, seminorm)
from .pathspace import DiscretePath, energy, energy_gradient, hardy_inequality_check
from .solver import (GeodesicSolution, ShootingResult, exp_map, gradient_of_distance,
                     hessian_smallest_eigenvalue, integrate_geodesic, minimize_energy,
                     shoot_to_target)
from .examples import (RadialPotential, SpiralConfig, build_induced_metric, build_spiral_metric,
                       radial_eikonal_oracle)

__all__ = [
    "ConditionViolationError", "ConfigError", "ConstructionError", "DomainError",
    "EikopathError", "IntegrationError", "MetricEvaluationError", "NonConvergenceError",
    "PreconditionError", "LogRadialLattice", "MetricField", "constant_metric",
    "convexity_margin", "ellipticity_estimate", "euclidean", "from_callable",
    "orthogonal_decomposition_defect", "perturbation_distance", "perturbed",
    "radial_block_metric", "seminorm", "DiscretePath", "energy", "energy_gradient",
    "hardy_inequality_check", "GeodesicSolution", "ShootingResult", "exp_map",
    "gradient_of_distance", "hessian_smallest_eigenvalue", "integrate_geodesic",
    "minimize_energy", "shoot_to_target", "RadialPotential", "SpiralConfig",
    "build_induced_metric", "build_spiral_metric", "radial_eikonal_oracle",
]
