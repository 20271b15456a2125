"""Bifurcating integer-valued autoregressive (BINAR) processes on binary trees.

Simulation with binomial or Poisson thinning and common-shock Poisson
immigration, weighted least-squares estimation of the mean, variance and
covariance parameters, the limit objects of the asymptotic theory, and a
Monte Carlo harness checking them.
"""
from .distributions import (
    ImmigrationSpec,
    InvalidParameterError,
    OffspringFamily,
    RngStream,
    family_central_moment,
    sample_immigration_pair,
    thin,
)
from .estimators import (
    EstimateSet,
    estimate,
    estimate_path,
    increasing_process,
    residuals,
    rho_hat,
    wls_eta,
    wls_theta,
    wls_zeta,
)
from .experiments import ExperimentConfig, Tolerances, Truth, run_experiment
from .limits import (
    LimitObjects,
    limit_matrices_mc,
    limit_matrices_tree,
    mean_T,
    qsl_target,
    second_moment_T,
    sigma_rho_sq,
    theta_clt_cov,
)
from .model import DerivedMoments, ModelParams, derive_moments, preset, validate_hypotheses
from .tree import BinarTree, sample_T, simulate_branch, simulate_tree

__version__ = "0.1.0"

__all__ = [
    "BinarTree",
    "DerivedMoments",
    "EstimateSet",
    "ExperimentConfig",
    "ImmigrationSpec",
    "InvalidParameterError",
    "LimitObjects",
    "ModelParams",
    "OffspringFamily",
    "RngStream",
    "Tolerances",
    "Truth",
    "derive_moments",
    "estimate",
    "estimate_path",
    "family_central_moment",
    "increasing_process",
    "limit_matrices_mc",
    "limit_matrices_tree",
    "mean_T",
    "preset",
    "qsl_target",
    "residuals",
    "rho_hat",
    "run_experiment",
    "sample_T",
    "sample_immigration_pair",
    "second_moment_T",
    "sigma_rho_sq",
    "simulate_branch",
    "simulate_tree",
    "theta_clt_cov",
    "thin",
    "validate_hypotheses",
    "wls_eta",
    "wls_theta",
    "wls_zeta",
]
