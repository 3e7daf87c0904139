//! Experiment orchestration and the on-disk artifact formats.

mod config;
mod experiment;
pub mod io;
mod workflow;

pub use config::{default_grid, logspace, low_dose_i0, ExperimentConfig, MeasurementModel, Method, RoiRect};
pub use experiment::{
    config_hash, grid_search_lambda, run_experiment, simulate, ExperimentReport, ExperimentSummary, MethodOutcome,
    MethodSummary, RoiSummary,
};
pub use workflow::{
    grid_search_lambda_with, run_path, run_zoom, simulate_measurements, zoom_operator, ScanSpec,
};
