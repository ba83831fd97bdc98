"""Hierarchical Bayesian inference of glacier thickness along a flowline."""
from .core import (
    FlowlineGrid,
    ObservationSet,
    PhysicalConstants,
    ValidationError,
    build_grid,
)
from .dynamics import (
    DynamicsParams,
    RootSelection,
    cumulative_flux,
    forward_model,
    naive_inversion,
    sia_correction,
    solve_thickness,
    synthetic_velocity,
)
from .gp_width import WidthHyperparams, WidthModel, matern32_cov, sample_width_prior, width_mean_function
from .inference import (
    ChainConfig,
    FitProblem,
    ParameterState,
    PosteriorSamples,
    PriorSpec,
    chain_diagnostics,
    log_likelihood,
    log_posterior,
    log_prior,
    predict_thickness,
    run_chain,
    run_chains,
)
from .simulation import ExperimentSpec, make_truth_profile, run_experiment, run_experiment_grid, width_coverage
from .smoothing import SmootherSpec, SurfaceFields, prepare_surface_fields, smooth_inputs

__version__ = "0.1.0"

__all__ = [
    "ChainConfig",
    "DynamicsParams",
    "ExperimentSpec",
    "FitProblem",
    "FlowlineGrid",
    "ObservationSet",
    "ParameterState",
    "PhysicalConstants",
    "PosteriorSamples",
    "PriorSpec",
    "RootSelection",
    "SmootherSpec",
    "SurfaceFields",
    "ValidationError",
    "WidthHyperparams",
    "WidthModel",
    "build_grid",
    "chain_diagnostics",
    "cumulative_flux",
    "forward_model",
    "log_likelihood",
    "log_posterior",
    "log_prior",
    "make_truth_profile",
    "matern32_cov",
    "naive_inversion",
    "predict_thickness",
    "prepare_surface_fields",
    "run_chain",
    "run_chains",
    "run_experiment",
    "run_experiment_grid",
    "sample_width_prior",
    "sia_correction",
    "smooth_inputs",
    "solve_thickness",
    "synthetic_velocity",
    "width_coverage",
    "width_mean_function",
]
