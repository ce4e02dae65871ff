//! Experiment harness for the `zofl` crate.
//!
//! A TOML config names a problem, a list of runs (one per algorithm setting)
//! and a list of seeds. [`execute`] runs every `(run, seed)` pair, in
//! parallel, and writes per-run CSV trajectories, the resolved config, a
//! text and JSON summary, and SVG convergence plots.
//!
//! CSV columns: `t,f,violation,lambda_norm,eta,obj_calls,cons_calls`, one row
//! per iterate starting at `t = 0`; floats carry 17 significant digits.

pub mod config;
pub mod execute;
pub mod plot;
pub mod summary;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{emit, parse_config, parse_str, ExperimentConfig, ProblemSpec, RunSpec};
pub use execute::{execute, execute_bound_check, run_all, BoundSummary, ExecuteOptions, RunOutput, CSV_HEADER};
pub use summary::SummaryReport;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("malformed config at `{field}`: {message}")]
    MalformedConfig { field: String, message: String },
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("writing {0}: {1}")]
    Csv(PathBuf, String),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl HarnessError {
    pub fn malformed(field: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::MalformedConfig { field: field.into(), message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Io(path.to_path_buf(), e)
    }
}

/// Built-in problems as `(name, description)`.
pub const PROBLEMS: [(&str, &str); 3] = [
    ("qp", "nonconvex QP: min 1/2|x|^2 + c'x s.t. 1/2|x|^2 + a'x + b = 0; keys n, seed, b"),
    (
        "thermal",
        "RC thermal control of a ring of buildings, inequality comfort constraint; keys a, b, d, horizon, x_set, comfort_budget, x_init",
    ),
    ("circle", "f = x1 + x2, h = |x|^2 - 1; known regularity constants for bound checks"),
];
