//! Experiment configuration, orchestration, persistence and reporting.

mod config;
mod phi_check;
mod report;
mod run;

pub use config::{BallSet, BallSpec, DomainSpec, EstimateSpec, ExperimentConfig};
pub use phi_check::check_phi;
pub use report::{report, Report, ReportRow};
pub use run::{
    boundary_field, central_free_boundary_points, relative_delta, run, run_many, solve_config, ResolutionRecord,
    RunManifest, RunOptions, Solved, StabilityRow,
};
