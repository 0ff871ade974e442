"""Tyler's and Maronna's scatter M-estimators and their Marchenko-Pastur limits."""

__version__ = "0.1.0"

from .estimators import (  # noqa: E402
    CovarianceEstimate,
    MaronnaMEstimator,
    SolverConfig,
    TylerMEstimator,
    maronna_estimate,
    maronna_weight_residual,
    sample_covariance,
    tyler_estimate,
    tyler_objective,
    tyler_weights,
)
from .rmt import SpectralMeasure, density_from_stieltjes, stieltjes_solve  # noqa: E402
from .sampling import SeedSpec, ShapeMatrix, sample_gaussian, sample_with_shape  # noqa: E402
from .spectra import MPLaw, ks_distance, mp_density, mp_support, operator_norm_diff  # noqa: E402
from .weights import WeightFn, maronna_scaling, parse_weight, psi_inverse, validate_u  # noqa: E402

__all__ = [
    "CovarianceEstimate",
    "MaronnaMEstimator",
    "MPLaw",
    "SeedSpec",
    "ShapeMatrix",
    "SolverConfig",
    "SpectralMeasure",
    "TylerMEstimator",
    "WeightFn",
    "density_from_stieltjes",
    "ks_distance",
    "maronna_estimate",
    "maronna_scaling",
    "maronna_weight_residual",
    "mp_density",
    "mp_support",
    "operator_norm_diff",
    "parse_weight",
    "psi_inverse",
    "sample_covariance",
    "sample_gaussian",
    "sample_with_shape",
    "stieltjes_solve",
    "tyler_estimate",
    "tyler_objective",
    "tyler_weights",
    "validate_u",
]
