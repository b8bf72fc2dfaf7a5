"""Local-linear GMM estimation for functional varying-coefficient models."""

from .core import (
    CoefficientEstimate,
    EstimatorConfig,
    FunctionalDataset,
    Grid,
    LLGMMError,
    load_dataset,
    load_estimate,
    quadrature_weights,
    trapezoid_integrate,
    write_dataset,
    write_estimate,
)
from .fpca import EigenSystem, lineup_eigen, select_truncation
from .gmm import estimate_full, gmm_at, gmm_curve
from .hetero import (
    InstrumentSet,
    VarianceModel,
    build_instruments,
    fit_variance,
    integrated_sq_residuals,
)
from .kernel import KernelSpec, kernel_eval, kernel_moment, kernel_scaled, local_design_vector
from .locallinear import cv_bandwidth, default_bandwidth_grid, lle_at, lle_curve
from .moments import MomentCovariance, MomentSample, moment_covariance, moment_eval, moment_sample
from .netfeat import (
    APLCurve,
    SimilarityMatrix,
    apl_curve,
    average_path_length,
    similarity_from_measurements,
    threshold_adjacency,
)
from .simulate import (
    MonteCarloReport,
    Scenario,
    basis_psi,
    calibrate_theta0,
    generate,
    imae,
    imse,
    run_cell,
)

__version__ = "0.1.0"

__all__ = [
    "APLCurve",
    "CoefficientEstimate",
    "EigenSystem",
    "EstimatorConfig",
    "FunctionalDataset",
    "Grid",
    "InstrumentSet",
    "KernelSpec",
    "LLGMMError",
    "MomentCovariance",
    "MomentSample",
    "MonteCarloReport",
    "Scenario",
    "SimilarityMatrix",
    "VarianceModel",
    "apl_curve",
    "average_path_length",
    "basis_psi",
    "build_instruments",
    "calibrate_theta0",
    "cv_bandwidth",
    "default_bandwidth_grid",
    "estimate_full",
    "fit_variance",
    "generate",
    "gmm_at",
    "gmm_curve",
    "imae",
    "imse",
    "integrated_sq_residuals",
    "kernel_eval",
    "kernel_moment",
    "kernel_scaled",
    "lineup_eigen",
    "lle_at",
    "lle_curve",
    "load_dataset",
    "load_estimate",
    "local_design_vector",
    "moment_covariance",
    "moment_eval",
    "moment_sample",
    "quadrature_weights",
    "run_cell",
    "select_truncation",
    "similarity_from_measurements",
    "threshold_adjacency",
    "trapezoid_integrate",
    "write_dataset",
    "write_estimate",
]
