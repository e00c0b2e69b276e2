"""Cluster-based Bayesian SIRD modelling of age-structured epidemic panels."""
from .clustering import (
    ClusterModel, FeatureMatrix, KSelectionReport, adjusted_rand_index, aic_bic, extract_features, kmeans,
    select_k, silhouette,
)
from .data_io import (
    PanelValidationError, SchemaError, SyntheticSpec, generate_synthetic, load_csv, scale_population,
    true_params_table, write_csv,
)
from .inference import (
    ChainTrace, ClusterFit, ConvergenceWarning, McmcConfig, PosteriorSummary, SamplerInitError, fit_cluster,
    gelman_rubin, run_chain, summarize,
)
from .model import (
    AgeGroup, CompartmentState, DegenerateError, HollingMixing, SirdParams, Trajectory, default_init, discrete_step,
    holling_force_of_infection, integrate_continuous, r0, simulate_trajectory,
)
from .observation import ObservationPanel, PriorSpec, ReportingParams, log_likelihood, log_posterior, log_prior
from .pipeline import StudyResult, fit_clusters, run_simulation_study

__version__ = "0.1.0"

__all__ = [
    "AgeGroup", "ChainTrace", "ClusterFit", "ClusterModel", "CompartmentState", "ConvergenceWarning",
    "DegenerateError", "FeatureMatrix", "HollingMixing", "KSelectionReport", "McmcConfig", "ObservationPanel",
    "PanelValidationError", "PosteriorSummary", "PriorSpec", "ReportingParams", "SamplerInitError", "SchemaError",
    "SirdParams", "StudyResult", "SyntheticSpec", "Trajectory", "adjusted_rand_index", "aic_bic", "default_init",
    "discrete_step", "extract_features", "fit_cluster", "fit_clusters", "gelman_rubin", "generate_synthetic",
    "holling_force_of_infection", "integrate_continuous", "kmeans", "load_csv", "log_likelihood", "log_posterior",
    "log_prior", "r0", "run_chain", "run_simulation_study", "scale_population", "select_k", "silhouette",
    "simulate_trajectory", "summarize", "true_params_table", "write_csv",
]
